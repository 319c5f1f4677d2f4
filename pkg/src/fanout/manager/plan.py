"""The manager's plan and the task's output contract.

The plan is a free-text partition strategy plus ordered steps with
progress flags; a rewrite replaces the whole plan but may not move any
surviving step's status backwards.  The output contract names the
tables the task must leave behind; satisfaction is checked against the
live catalog, mechanically, so no amount of model enthusiasm can
finalize a task that has not produced its tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ContractError, PlanError
from ..tables.schema import Schema

PENDING = "pending"
IN_PROGRESS = "in-progress"
DONE = "done"
STEP_STATUSES = (PENDING, IN_PROGRESS, DONE)
_ORDER = {PENDING: 0, IN_PROGRESS: 1, DONE: 2}


@dataclass(frozen=True)
class PlanStep:
    description: str
    status: str = PENDING

    def __post_init__(self) -> None:
        if not self.description:
            raise PlanError("plan step needs a description")
        if self.status not in STEP_STATUSES:
            raise PlanError(f"step status must be one of {STEP_STATUSES}, "
                            f"got {self.status!r}")


@dataclass(frozen=True)
class Plan:
    partition_strategy: str
    steps: tuple[PlanStep, ...]

    def to_payload(self) -> dict:
        return {"partition_strategy": self.partition_strategy,
                "steps": [[s.description, s.status] for s in self.steps]}

    @classmethod
    def from_payload(cls, payload: dict) -> "Plan":
        return cls(payload["partition_strategy"],
                   tuple(PlanStep(d, s) for d, s in payload["steps"]))

    def render(self) -> str:
        lines = [f"partition strategy: {self.partition_strategy}"]
        lines += [f"  [{s.status}] {s.description}" for s in self.steps]
        return "\n".join(lines)


def replace_plan(current: Plan | None, new: Plan) -> Plan:
    """Whole-plan replacement; surviving steps may not move backwards."""
    if current is not None:
        old = {s.description: s.status for s in current.steps}
        for step in new.steps:
            before = old.get(step.description)
            if before is not None and _ORDER[step.status] < _ORDER[before]:
                raise PlanError(
                    f"step {step.description!r} may not move backwards "
                    f"({before} -> {step.status})")
    return new


@dataclass(frozen=True)
class TableSpec:
    name: str
    schema: Schema | None = None
    row_count: int | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ContractError("contract table spec needs a display name")
        if self.row_count is not None and self.row_count < 0:
            raise ContractError(f"row count must be non-negative, "
                                f"got {self.row_count}")

    def to_payload(self) -> dict:
        return {"name": self.name,
                "schema": self.schema.to_payload() if self.schema else None,
                "row_count": self.row_count}

    @classmethod
    def from_payload(cls, payload: dict) -> "TableSpec":
        schema = payload.get("schema")
        return cls(payload["name"],
                   Schema.from_payload(schema) if schema else None,
                   payload.get("row_count"))


@dataclass(frozen=True)
class OutputContract:
    specs: tuple[TableSpec, ...] = ()

    def to_payload(self) -> dict:
        return {"tables": [s.to_payload() for s in self.specs]}

    @classmethod
    def from_payload(cls, payload: dict) -> "OutputContract":
        return cls(tuple(TableSpec.from_payload(p)
                         for p in payload.get("tables", [])))


def check_contract(contract: OutputContract, catalog) -> dict:
    """Satisfaction report against live, non-archived tables.

    Schema matching is by field-name/type set, order-insensitive and
    blind to nullability; row counts match exactly when specified.
    """
    reports = []
    for spec in contract.specs:
        reasons: list[str] = []
        entry = catalog.by_name(spec.name)
        if entry is None:
            reasons.append(f"no live table named {spec.name!r}")
        else:
            if spec.schema is not None and \
                    entry.schema.type_set() != spec.schema.type_set():
                reasons.append(
                    f"schema mismatch: expected "
                    f"{sorted(spec.schema.type_set())}, table has "
                    f"{sorted(entry.schema.type_set())}")
            if spec.row_count is not None and \
                    entry.row_count != spec.row_count:
                reasons.append(f"row count {entry.row_count} != expected "
                               f"{spec.row_count}")
        reports.append({"name": spec.name, "satisfied": not reasons,
                        "reasons": reasons})
    return {"satisfied": all(r["satisfied"] for r in reports),
            "specs": reports}
