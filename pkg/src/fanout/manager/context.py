"""Prompt assembly for the manager's model calls.

The system prompt comes from versioned template files next to this
module.  The state block is re-rendered from live subsystems on every
call: tables appear as digests, never as raw rows, so the block stays
small no matter how large the catalog grows.  The transcript is the
only unbounded part, and it degrades by eliding the oldest tool
results before anything else.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import ContextBudgetError
from ..gateway import SYSTEM, TOOL_RESULT, USER, Message
from ..tables.digest import build_digest
from .plan import check_contract

_PROMPTS = Path(__file__).parent / "prompts"

ELISION_MARK = "[tool result elided]"
DEFAULT_CONTEXT_BUDGET = 120_000    # characters, summed over messages
DEFAULT_DIGEST_BUDGET = 1024        # bytes per table digest

_ROUND_ONE_NOTE = (
    "This is the first round. Explore your local state before anything "
    "else: list tables, read their digests, and review the agent "
    "presets. Then write a plan and an output contract.")


def system_prompt() -> str:
    parts = [(_PROMPTS / name).read_text(encoding="utf-8").strip()
             for name in ("system.md", "patterns.md")]
    return "\n\n".join(parts)


def gate_prompt() -> str:
    return (_PROMPTS / "gate.md").read_text(encoding="utf-8").strip()


def state_block(suite, query: str, round_no: int,
                last_batch: dict | None,
                digest_budget: int = DEFAULT_DIGEST_BUDGET) -> str:
    lines = [f"# Task\n{query}", f"# Round {round_no}"]
    if round_no == 1:
        lines.append(_ROUND_ONE_NOTE)

    if suite.plan is None:
        lines.append("# Plan\n(none yet)")
    else:
        lines.append("# Plan\n" + suite.plan.render())

    if not suite.contract.specs:
        lines.append("# Output contract\n(none yet)")
    else:
        status = check_contract(suite.contract, suite.catalog)
        rows = []
        for spec in status["specs"]:
            note = ("satisfied" if spec["satisfied"]
                    else "unmet: " + "; ".join(spec["reasons"]))
            rows.append(f"- {spec['name']}: {note}")
        lines.append("# Output contract\n" + "\n".join(rows))

    digests = []
    for entry in suite.catalog.list_tables():
        digest = build_digest(entry.table_id, entry.name, entry.kind,
                              entry.schema,
                              suite.catalog.records(entry.table_id),
                              digest_budget)
        digests.append(digest.to_bytes().decode("utf-8"))
    lines.append("# Tables (digests)\n"
                 + ("\n".join(digests) if digests else "(none)"))

    staged = suite.fabric.list_staged()
    if staged:
        rows = []
        for entry in staged:
            where = (f" over table {entry.source_table}"
                     if entry.source_table else " (single)")
            rows.append(f"- {entry.staged_id}: preset "
                        f"{entry.template.preset}, mode "
                        f"{entry.template.mode}{where}")
        lines.append("# Staged subtasks\n" + "\n".join(rows))
    else:
        lines.append("# Staged subtasks\n(empty)")

    lines.append("# Last batch\n"
                 + (json.dumps(last_batch, sort_keys=True)
                    if last_batch else "(none)"))
    return "\n\n".join(lines)


def render_context(suite, query: str, round_no: int,
                   transcript: list[Message],
                   last_batch: dict | None,
                   context_budget: int = DEFAULT_CONTEXT_BUDGET,
                   digest_budget: int = DEFAULT_DIGEST_BUDGET
                   ) -> list[Message]:
    """Messages for one exploration call, within the character budget."""
    messages = [Message(SYSTEM, system_prompt()),
                Message(USER, state_block(suite, query, round_no,
                                          last_batch, digest_budget)),
                *transcript]

    def total(msgs: list[Message]) -> int:
        return sum(len(m.content) for m in msgs)

    if total(messages) <= context_budget:
        return messages
    for i, msg in enumerate(messages):
        if msg.role == TOOL_RESULT and msg.content != ELISION_MARK:
            messages[i] = Message(TOOL_RESULT, ELISION_MARK,
                                  tool_call_id=msg.tool_call_id)
            if total(messages) <= context_budget:
                return messages
    raise ContextBudgetError(
        f"context is {total(messages)} characters with every tool result "
        f"elided; budget is {context_budget}. Digest or tool byte budgets "
        f"are too generous for this budget.")
