"""Token accounting and cost estimates.

Every completion is recorded once under every id in its scope chain
(typically ``(task_id, subtask_id)``), so a task report already includes
its subtasks' tokens and a subtask report isolates one unit of work.
Cost is pure arithmetic over a configured per-grade rate table:
``tokens_in * rate_in + tokens_out * rate_out``, summed over grades.
"""

from __future__ import annotations

import threading

from ..errors import UnknownScope
from .types import Usage

# per-token rates by model grade: {grade: (input_rate, output_rate)}
DEFAULT_RATES = {
    "planner": (1e-6, 2e-6),
    "worker": (1e-6, 2e-6),
    "nano": (1e-7, 2e-7),
}


class UsageLedger:
    def __init__(self, rates: dict[str, tuple[float, float]] | None = None) -> None:
        self.rates = dict(DEFAULT_RATES if rates is None else rates)
        self._lock = threading.Lock()
        # {scope_id: {grade: [input_tokens, output_tokens, completions]}}
        self._scopes: dict[str, dict[str, list[int]]] = {}

    def record(self, scope: tuple[str, ...], grade: str, usage: Usage) -> None:
        with self._lock:
            for scope_id in scope:
                by_grade = self._scopes.setdefault(scope_id, {})
                row = by_grade.setdefault(grade, [0, 0, 0])
                row[0] += usage.input_tokens
                row[1] += usage.output_tokens
                row[2] += 1

    def report(self, scope_id: str, strict: bool = True) -> dict:
        """Totals and cost for one scope id.

        ``strict=False`` reports zeros for a scope the ledger has never
        seen; callers that can verify the scope exists elsewhere (e.g. a
        task id in the state store) use that to report a legitimate
        zero-completion total.
        """
        with self._lock:
            by_grade = self._scopes.get(scope_id)
            if by_grade is None:
                if strict:
                    raise UnknownScope(f"no usage recorded for scope {scope_id!r}")
                by_grade = {}
            snapshot = {g: list(row) for g, row in by_grade.items()}
        input_tokens = sum(r[0] for r in snapshot.values())
        output_tokens = sum(r[1] for r in snapshot.values())
        completions = sum(r[2] for r in snapshot.values())
        cost = 0.0
        for grade, (i, o, _) in snapshot.items():
            rate_in, rate_out = self.rates.get(grade, (0.0, 0.0))
            cost += i * rate_in + o * rate_out
        return {"scope": scope_id, "input_tokens": input_tokens,
                "output_tokens": output_tokens, "completions": completions,
                "cost": cost,
                "by_grade": {g: {"input_tokens": r[0], "output_tokens": r[1],
                                 "completions": r[2]}
                             for g, r in sorted(snapshot.items())}}

    def known_scope(self, scope_id: str) -> bool:
        with self._lock:
            return scope_id in self._scopes
