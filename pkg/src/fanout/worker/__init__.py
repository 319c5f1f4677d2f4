"""Subtask workers: the llm-only fast path and the sandboxed agent."""

from .agent import STEP_BUDGET, FullAgentWorker
from .llm import LlmWorker, WorkerResult, render_prompt
from .router import WorkerRouter
from .sandbox import (LEADER, SandboxPlan, SandboxRouter, build_service,
                      build_tool)
from .validate import validate_output
from .workspace import OUTPUT_RELPATH, Workspace

__all__ = [
    "FullAgentWorker",
    "LEADER",
    "LlmWorker",
    "OUTPUT_RELPATH",
    "STEP_BUDGET",
    "SandboxPlan",
    "SandboxRouter",
    "Workspace",
    "WorkerResult",
    "WorkerRouter",
    "build_service",
    "build_tool",
    "render_prompt",
    "validate_output",
]
