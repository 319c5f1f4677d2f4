"""The per-task manager: a round loop over explore, report, gate, run.

One manager drives one task and is logically single-threaded; all
parallelism lives below it, inside dispatched batches.  Each round the
model explores through tools, files a report, and may propose a
transition.  Proposals pass a delegation gate: mechanical checks first
(finalizing is impossible while the output contract is unsatisfied,
dispatching is impossible with nothing staged), then a reviewer model
pass.  A rejection hands control back to exploration within the same
round, at most once.  Every round ends with exactly one checkpoint, so
a crashed task resumes at the following round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

from ..blobs import BlobRef
from ..errors import TaskFailed
from ..gateway import (ASSISTANT, PLANNER, SYSTEM, TOOL_CALLS, TOOL_RESULT,
                       USER, ChatRequest, Message)
from ..tables.analytics import Analytics
from ..tables.catalog import TableCatalog
from ..tables.schema import Schema
from .context import (DEFAULT_CONTEXT_BUDGET, DEFAULT_DIGEST_BUDGET,
                      gate_prompt, render_context)
from .plan import OutputContract, Plan, check_contract
from .tools import ToolSuite

ROUND_BUDGET = 12
TOOL_CALL_BUDGET = 40       # exploration tool calls per round
GATE_ATTEMPTS = 2           # proposals judged per round

CONTINUE = "continue"
DISPATCH = "dispatch-batch"
FINALIZE = "finalize"
TRANSITIONS = (CONTINUE, DISPATCH, FINALIZE)

REPORT_SCHEMA = Schema.of(("accomplishments", "text_list"),
                          ("next_steps", "text_list"),
                          ("critical_blockers", "text_list"),
                          ("proposed_transition", "text"))
PROPOSAL_SCHEMA = Schema.of(("proposed_transition", "text"))
GATE_SCHEMA = Schema.of(("verdict", "text"), ("reason", "text", True))

REPORT_INSTRUCTION = (
    "# Round report\n"
    "File this round's report: accomplishments, next steps, and "
    "critical blockers, each as a list of short statements. Set "
    "proposed_transition to continue, dispatch-batch, or finalize.")

REVISED_INSTRUCTION = (
    "# Revised proposal\n"
    "Given the gate's rejection and any follow-up work above, set "
    "proposed_transition to continue, dispatch-batch, or finalize.")


@dataclass(frozen=True)
class RoundReport:
    """What the model says a round accomplished; one per round."""

    accomplishments: tuple[str, ...]
    next_steps: tuple[str, ...]
    critical_blockers: tuple[str, ...]

    def to_payload(self) -> dict:
        return {"accomplishments": list(self.accomplishments),
                "next_steps": list(self.next_steps),
                "critical_blockers": list(self.critical_blockers)}

    @classmethod
    def from_structured(cls, obj: dict) -> "RoundReport":
        return cls(tuple(obj.get("accomplishments") or ()),
                   tuple(obj.get("next_steps") or ()),
                   tuple(obj.get("critical_blockers") or ()))


class TaskManager:
    def __init__(self, task_id: str, gateway, suite: ToolSuite, *,
                 round_budget: int = ROUND_BUDGET,
                 tool_call_budget: int = TOOL_CALL_BUDGET,
                 context_budget: int = DEFAULT_CONTEXT_BUDGET,
                 digest_budget: int = DEFAULT_DIGEST_BUDGET,
                 grade: str = PLANNER,
                 round_hook: Callable[[int], None] | None = None,
                 start_round: int = 1, batch_counter: int = 0,
                 last_batch: dict | None = None) -> None:
        self.task_id = task_id
        self.gateway = gateway
        self.suite = suite
        self.round_budget = round_budget
        self.tool_call_budget = tool_call_budget
        self.context_budget = context_budget
        self.digest_budget = digest_budget
        self.grade = grade
        self.round_hook = round_hook
        self.start_round = start_round
        self.batch_counter = batch_counter
        self.last_batch = last_batch
        self.last_report: RoundReport | None = None
        self.query = suite.state.get_task(task_id).query

    # --- driving ----------------------------------------------------------

    def run(self) -> dict:
        round_no = self.start_round
        while True:
            if round_no > self.round_budget:
                return self._fail(round_no)
            final = self._run_round(round_no)
            if final is not None:
                return final
            round_no += 1

    def _fail(self, round_no: int) -> dict:
        reason = {"reason": "round budget exhausted",
                  "rounds": self.round_budget,
                  "last_report": (self.last_report.to_payload()
                                  if self.last_report else None)}
        self.suite.state.fail_task(self.task_id, reason)
        self._event("task_failed", {"round": round_no - 1,
                                    "detail": reason})
        raise TaskFailed(f"task {self.task_id!r}: round budget "
                         f"{self.round_budget} exhausted without "
                         f"finalizing")

    def _run_round(self, round_no: int) -> dict | None:
        if self.round_hook is not None:
            self.round_hook(round_no)
        self._event("round_started", {"round": round_no})
        transcript: list[Message] = []
        calls_left = self._explore(round_no, transcript,
                                   self.tool_call_budget)

        obj = self._structured(round_no, transcript, REPORT_INSTRUCTION,
                               REPORT_SCHEMA)
        report = RoundReport.from_structured(obj)
        self.last_report = report
        self._event("round_reported", {"round": round_no,
                                       "report": report.to_payload()})
        proposal = (obj.get("proposed_transition") or CONTINUE).strip()

        finalized = None
        for attempt in range(1, GATE_ATTEMPTS + 1):
            if proposal == CONTINUE:
                break
            self._event("transition_proposed",
                        {"round": round_no, "proposal": proposal,
                         "attempt": attempt})
            accepted, reason, mechanical = self._gate(round_no, proposal,
                                                      report)
            self._event("gate_decision",
                        {"round": round_no, "proposal": proposal,
                         "attempt": attempt, "accepted": accepted,
                         "reason": reason, "mechanical": mechanical})
            if accepted:
                if proposal == DISPATCH:
                    self._dispatch()
                else:
                    finalized = True
                break
            transcript.append(Message(USER, (
                f"The delegation gate rejected your {proposal} proposal: "
                f"{reason}\nAddress the rejection; you will then be asked "
                f"for a revised proposal.")))
            if attempt == GATE_ATTEMPTS:
                break
            calls_left = self._explore(round_no, transcript, calls_left)
            obj = self._structured(round_no, transcript,
                                   REVISED_INSTRUCTION, PROPOSAL_SCHEMA)
            proposal = (obj.get("proposed_transition") or CONTINUE).strip()

        self._checkpoint(round_no, report)
        self._event("round_checkpointed", {"round": round_no})
        if finalized:
            return self._finalize(round_no, report)
        return None

    # --- phases -----------------------------------------------------------

    def _explore(self, round_no: int, transcript: list[Message],
                 calls_left: int) -> int:
        while calls_left > 0:
            messages = render_context(self.suite, self.query, round_no,
                                      transcript, self.last_batch,
                                      self.context_budget,
                                      self.digest_budget)
            request = ChatRequest(tuple(messages),
                                  tools=self.suite.signatures(),
                                  model_hint=self.grade,
                                  scope=(self.task_id, "manager"))
            response = self.gateway.complete(request)
            if response.kind != TOOL_CALLS:
                transcript.append(Message(ASSISTANT, response.text or ""))
                break
            transcript.append(Message(ASSISTANT, "",
                                      tool_calls=response.tool_calls))
            for call in response.tool_calls:
                out = self.suite.dispatch(call.name, dict(call.arguments))
                transcript.append(Message(TOOL_RESULT, out["content"],
                                          tool_call_id=call.call_id))
                calls_left -= 1
        return max(calls_left, 0)

    def _structured(self, round_no: int, transcript: list[Message],
                    instruction: str, schema: Schema) -> dict:
        messages = render_context(self.suite, self.query, round_no,
                                  transcript, self.last_batch,
                                  self.context_budget, self.digest_budget)
        request = ChatRequest((*messages, Message(USER, instruction)),
                              output_schema=schema, model_hint=self.grade,
                              scope=(self.task_id, "manager"))
        return self.gateway.complete(request).structured

    def _gate(self, round_no: int, proposal: str,
              report: RoundReport) -> tuple[bool, str | None, bool]:
        """Returns (accepted, reason, decided mechanically)."""
        if proposal not in (DISPATCH, FINALIZE):
            return False, f"unknown transition {proposal!r}", True
        if proposal == FINALIZE:
            if not self.suite.contract.specs:
                return False, "no output contract is written", True
            status = check_contract(self.suite.contract, self.suite.catalog)
            unmet = [s["name"] for s in status["specs"]
                     if not s["satisfied"]]
            if unmet:
                return (False, "contract unsatisfied: " + ", ".join(unmet),
                        True)
        if proposal == DISPATCH and not self.suite.fabric.list_staged():
            return False, "nothing staged", True
        request = ChatRequest(
            (Message(SYSTEM, gate_prompt()),
             Message(USER, self._gate_state(round_no, proposal, report))),
            output_schema=GATE_SCHEMA, model_hint=self.grade,
            scope=(self.task_id, "manager"))
        obj = self.gateway.complete(request).structured
        verdict = (obj.get("verdict") or "").strip().lower()
        if verdict == "accept":
            return True, obj.get("reason"), False
        return False, obj.get("reason") or f"gate rejected {proposal}", False

    def _gate_state(self, round_no: int, proposal: str,
                    report: RoundReport) -> str:
        staged = self.suite.fabric.list_staged()
        staged_lines = [f"- {e.staged_id}: preset {e.template.preset}, "
                        f"mode {e.template.mode}"
                        + (f", over table {e.source_table}"
                           if e.source_table else " (single)")
                        for e in staged] or ["(empty)"]
        if self.suite.contract.specs:
            status = check_contract(self.suite.contract, self.suite.catalog)
            contract_lines = [
                f"- {s['name']}: " + ("satisfied" if s["satisfied"] else
                                      "unmet: " + "; ".join(s["reasons"]))
                for s in status["specs"]]
        else:
            contract_lines = ["(none)"]
        return "\n\n".join([
            "# Delegation gate",
            f"# Round {round_no}",
            f"Proposed transition: {proposal}",
            "# Task\n" + self.query,
            "# Plan\n" + (self.suite.plan.render() if self.suite.plan
                          else "(none)"),
            "# Output contract\n" + "\n".join(contract_lines),
            "# Report\n" + json.dumps(report.to_payload(), sort_keys=True),
            "# Staged subtasks\n" + "\n".join(staged_lines)])

    # --- transitions ------------------------------------------------------

    def _dispatch(self) -> dict:
        self.batch_counter += 1
        batch_id = f"b{self.batch_counter:03d}"
        result = self.suite.fabric.dispatch(self.task_id, batch_id)
        succeeded = sum(1 for s in result.statuses.values()
                        if s == "success")
        payload = {"batch_id": batch_id, "total": len(result.statuses),
                   "succeeded": succeeded,
                   "failed": len(result.statuses) - succeeded,
                   "results_table": result.results_table,
                   "row_count": result.row_count,
                   "failures": [{"spec_id": f["spec_id"],
                                 "error": f["error"]}
                                for f in result.failures[:5]]}
        self.last_batch = payload
        return payload

    def _finalize(self, round_no: int, report: RoundReport) -> dict:
        tables = []
        for spec in self.suite.contract.specs:
            entry = self.suite.catalog.by_name(spec.name)
            tables.append({"name": spec.name, "id": entry.table_id,
                           "rows": entry.row_count})
        final = {"report": report.to_payload(), "tables": tables}
        self.suite.state.finalize_task(self.task_id, final)
        self._event("task_finalized", {"round": round_no,
                                       "tables": tables})
        return final

    # --- persistence ------------------------------------------------------

    def _checkpoint(self, round_no: int, report: RoundReport) -> None:
        suite = self.suite
        payload = {
            "round": round_no,
            "catalog": suite.catalog.snapshot_to_blob().to_payload(),
            "plan": suite.plan.to_payload() if suite.plan else None,
            "contract": suite.contract.to_payload(),
            "staging": suite.fabric.snapshot_staging(),
            "presets": suite.presets.snapshot(),
            "batch_counter": self.batch_counter,
            "last_batch": self.last_batch,
            "report": report.to_payload(),
        }
        suite.state.write_checkpoint(self.task_id, round_no, payload)

    def _event(self, kind: str, payload: dict) -> None:
        self.suite.state.append_event(self.task_id, kind, payload)


def restore_suite(task_id: str, blobs, state, presets, workers,
                  fabric_kwargs: dict | None = None
                  ) -> tuple[ToolSuite, "object"]:
    """Rebuild a task's working set from its latest checkpoint.

    Returns the restored suite plus the checkpoint; the caller starts a
    TaskManager at checkpoint round + 1 with the stored batch counter.
    """
    from ..fabric.executor import SubtaskFabric

    checkpoint = state.recover_latest_checkpoint(task_id)
    payload = checkpoint.payload
    catalog = TableCatalog.restore_from_blob(
        blobs, BlobRef.from_payload(payload["catalog"]))
    presets.restore(payload["presets"])
    fabric = SubtaskFabric(catalog, blobs, presets, state, workers,
                           **(fabric_kwargs or {}))
    fabric.restore_staging(payload["staging"])
    suite = ToolSuite(task_id, catalog, Analytics(catalog), fabric, state,
                      presets)
    suite.plan = (Plan.from_payload(payload["plan"])
                  if payload["plan"] else None)
    suite.contract = OutputContract.from_payload(payload["contract"])
    return suite, checkpoint
