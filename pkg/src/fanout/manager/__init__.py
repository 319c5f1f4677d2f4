from .context import (DEFAULT_CONTEXT_BUDGET, DEFAULT_DIGEST_BUDGET,
                      ELISION_MARK, render_context, state_block,
                      system_prompt)
from .core import (CONTINUE, DISPATCH, FINALIZE, GATE_ATTEMPTS,
                   ROUND_BUDGET, TOOL_CALL_BUDGET, TRANSITIONS,
                   RoundReport, TaskManager, restore_suite)
from .plan import (Plan, PlanStep, OutputContract, TableSpec,
                   check_contract, replace_plan)
from .tools import TOOL_NAMES, TOOL_TABLE, ToolSuite

__all__ = ["CONTINUE", "DEFAULT_CONTEXT_BUDGET", "DEFAULT_DIGEST_BUDGET",
           "DISPATCH", "ELISION_MARK", "FINALIZE", "GATE_ATTEMPTS",
           "OutputContract", "Plan", "PlanStep", "ROUND_BUDGET",
           "RoundReport", "TOOL_CALL_BUDGET", "TOOL_NAMES", "TOOL_TABLE",
           "TRANSITIONS", "TableSpec", "TaskManager", "ToolSuite",
           "check_contract", "render_context", "replace_plan",
           "restore_suite", "state_block", "system_prompt"]
