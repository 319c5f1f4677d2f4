"""Row predicates: a conjunction of simple clauses.

Comparators: eq, neq, lt, lte, gt, gte, contains, is_null, not_null,
in_set.  Ordering applies to integer, real, and text fields; contains is
substring on text and membership on list-of-text; structured values only
support the null checks.  Blob references compare by content id.  A null
field value fails every clause except is_null.  Disjunction is
deliberately absent: callers compose richer filters from derived tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from ..blobs.store import BlobRef
from ..errors import PredicateError
from .schema import (BLOB, BOOLEAN, INTEGER, REAL, STRUCT, TEXT, TEXT_LIST,
                     Record, Schema)

COMPARATORS = ("eq", "neq", "lt", "lte", "gt", "gte",
               "contains", "is_null", "not_null", "in_set")

_ORDERING = ("lt", "lte", "gt", "gte")
_NO_VALUE = ("is_null", "not_null")


@dataclass(frozen=True)
class Clause:
    field: str
    op: str
    value: Any = None


@dataclass(frozen=True)
class Predicate:
    clauses: tuple[Clause, ...]

    @classmethod
    def of(cls, *clauses: tuple) -> "Predicate":
        return cls(tuple(Clause(*c) for c in clauses))

    @classmethod
    def from_payload(cls, payload: Any) -> "Predicate":
        if isinstance(payload, dict):
            payload = payload.get("all", [])
        if not isinstance(payload, list):
            raise PredicateError(f"predicate payload must be a list, got {type(payload).__name__}")
        clauses = []
        for item in payload:
            if not isinstance(item, dict) or "field" not in item or "op" not in item:
                raise PredicateError(f"malformed clause {item!r}")
            clauses.append(Clause(item["field"], item["op"], item.get("value")))
        return cls(tuple(clauses))

    def to_payload(self) -> dict:
        return {"all": [{"field": c.field, "op": c.op, "value": c.value}
                        for c in self.clauses]}


def _literal_ok(ftype: str, value: Any) -> bool:
    if ftype == TEXT:
        return isinstance(value, str)
    if ftype == INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if ftype == REAL:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if ftype == BOOLEAN:
        return isinstance(value, bool)
    if ftype == BLOB:
        return isinstance(value, str)  # compared against the content id
    return False


def validate_predicate(schema: Schema, pred: Predicate) -> None:
    for c in pred.clauses:
        f = schema.field(c.field)
        if c.op not in COMPARATORS:
            raise PredicateError(f"unknown comparator {c.op!r}")
        if c.op in _NO_VALUE:
            continue
        if f.type == STRUCT:
            raise PredicateError(
                f"field {c.field!r} is structured; only is_null/not_null apply")
        if c.op in _ORDERING:
            if f.type not in (INTEGER, REAL, TEXT):
                raise PredicateError(
                    f"comparator {c.op} needs an ordered field; {c.field!r} is {f.type}")
            if not _literal_ok(f.type, c.value):
                raise PredicateError(
                    f"literal {c.value!r} does not fit {f.type} field {c.field!r}")
        elif c.op == "contains":
            if f.type not in (TEXT, TEXT_LIST):
                raise PredicateError(
                    f"contains needs text or text_list; {c.field!r} is {f.type}")
            if not isinstance(c.value, str):
                raise PredicateError(f"contains literal must be text, got {c.value!r}")
        elif c.op == "in_set":
            if f.type == TEXT_LIST:
                raise PredicateError(f"in_set does not apply to list field {c.field!r}")
            if not isinstance(c.value, list) or not c.value:
                raise PredicateError("in_set literal must be a non-empty list")
            for v in c.value:
                if not _literal_ok(f.type, v):
                    raise PredicateError(
                        f"in_set member {v!r} does not fit {f.type} field {c.field!r}")
        else:  # eq / neq
            if f.type == TEXT_LIST:
                raise PredicateError(f"eq/neq do not apply to list field {c.field!r}")
            if not _literal_ok(f.type, c.value):
                raise PredicateError(
                    f"literal {c.value!r} does not fit {f.type} field {c.field!r}")


def _comparable(ftype: str, value: Any) -> Any:
    if isinstance(value, BlobRef):
        return value.id
    if ftype == REAL:
        return float(value)
    return value


def matches(schema: Schema, pred: Predicate, record: Record) -> bool:
    for c in pred.clauses:
        f = schema.field(c.field)
        v = record.values.get(c.field)
        if c.op == "is_null":
            if v is not None:
                return False
            continue
        if c.op == "not_null":
            if v is None:
                return False
            continue
        if v is None:
            return False
        v = _comparable(f.type, v)
        lit = c.value
        if c.op == "eq":
            if v != lit:
                return False
        elif c.op == "neq":
            if v == lit:
                return False
        elif c.op == "lt":
            if not v < lit:
                return False
        elif c.op == "lte":
            if not v <= lit:
                return False
        elif c.op == "gt":
            if not v > lit:
                return False
        elif c.op == "gte":
            if not v >= lit:
                return False
        elif c.op == "contains":
            if lit not in v:
                return False
        elif c.op == "in_set":
            if v not in lit:
                return False
        else:
            raise PredicateError(f"unknown comparator {c.op!r}")
    return True
