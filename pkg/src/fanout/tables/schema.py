"""Field types, schemas, and records.

A table value is one of seven types: text, integer, real, boolean, a
reference to a stored blob, a structured (JSON-shaped) value, or a list of
text.  Nulls are explicit per field.  Reals must be finite: NaN and the
infinities have no stable canonical encoding, so they are rejected at
validation time rather than allowed to poison determinism downstream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Iterable

from ..blobs.store import BlobRef
from ..errors import SchemaViolation, UnknownField

TEXT = "text"
INTEGER = "integer"
REAL = "real"
BOOLEAN = "boolean"
BLOB = "blob"
STRUCT = "struct"
TEXT_LIST = "text_list"

FIELD_TYPES = (TEXT, INTEGER, REAL, BOOLEAN, BLOB, STRUCT, TEXT_LIST)

NUMERIC_TYPES = (INTEGER, REAL)

# Types whose values can serve as join/group keys or set-membership literals.
SCALAR_TYPES = (TEXT, INTEGER, REAL, BOOLEAN, BLOB)


@dataclass(frozen=True)
class Field:
    name: str
    type: str
    nullable: bool = False

    def __post_init__(self) -> None:
        if not self.name:
            raise SchemaViolation("field name must be non-empty")
        if self.type not in FIELD_TYPES:
            raise SchemaViolation(f"unknown field type {self.type!r} for field {self.name!r}")


@dataclass(frozen=True)
class Schema:
    fields: tuple[Field, ...]

    def __post_init__(self) -> None:
        if not self.fields:
            raise SchemaViolation("schema must have at least one field")
        seen: set[str] = set()
        for f in self.fields:
            if f.name in seen:
                raise SchemaViolation(f"duplicate field name {f.name!r}")
            seen.add(f.name)

    @classmethod
    def of(cls, *fields: tuple | Field) -> "Schema":
        """Build from (name, type) or (name, type, nullable) tuples."""
        built = tuple(f if isinstance(f, Field) else Field(*f) for f in fields)
        return cls(built)

    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def field(self, name: str) -> Field:
        for f in self.fields:
            if f.name == name:
                return f
        raise UnknownField(f"no field {name!r}; schema has {list(self.names())}")

    def has(self, name: str) -> bool:
        return any(f.name == name for f in self.fields)

    def type_set(self) -> frozenset[tuple[str, str]]:
        """Order-insensitive (name, type) pairs; nullability excluded."""
        return frozenset((f.name, f.type) for f in self.fields)

    def to_payload(self) -> list[list]:
        return [[f.name, f.type, 1 if f.nullable else 0] for f in self.fields]

    @classmethod
    def from_payload(cls, payload: Iterable) -> "Schema":
        fields = []
        for item in payload:
            name, ftype = item[0], item[1]
            nullable = bool(item[2]) if len(item) > 2 else False
            fields.append(Field(name, ftype, nullable))
        return cls(tuple(fields))


@dataclass
class Record:
    row_id: str
    values: dict[str, Any]


def _check_value(ftype: str, value: Any) -> bool:
    if ftype == TEXT:
        return isinstance(value, str)
    if ftype == INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if ftype == REAL:
        if isinstance(value, bool):
            return False
        return isinstance(value, (int, float))
    if ftype == BOOLEAN:
        return isinstance(value, bool)
    if ftype == BLOB:
        return isinstance(value, BlobRef)
    if ftype == STRUCT:
        try:
            json.dumps(value, allow_nan=False)
        except (TypeError, ValueError):
            return False
        return True
    if ftype == TEXT_LIST:
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    return False


def conform_record(schema: Schema, record: Record, *, where: str = "") -> Record:
    """Validate a record against the schema and return a normalized copy.

    Strict: unknown fields are rejected, missing non-nullable fields are
    rejected, and every complaint names the row and field.  Reals are
    normalized to float; missing nullable fields become explicit nulls.
    """
    ctx = f"{where}row {record.row_id!r}"
    extra = set(record.values) - set(schema.names())
    if extra:
        raise SchemaViolation(f"{ctx}: unknown fields {sorted(extra)}")
    values: dict[str, Any] = {}
    for f in schema.fields:
        v = record.values.get(f.name)
        if v is None:
            if not f.nullable:
                kind = "is null" if f.name in record.values else "is missing"
                raise SchemaViolation(f"{ctx}: non-nullable field {f.name!r} {kind}")
            values[f.name] = None
            continue
        if not _check_value(f.type, v):
            raise SchemaViolation(
                f"{ctx}: field {f.name!r} expects {f.type}, got {type(v).__name__}"
            )
        if f.type == REAL:
            v = float(v)
            if not math.isfinite(v):
                raise SchemaViolation(f"{ctx}: field {f.name!r} must be finite")
        values[f.name] = v
    return Record(record.row_id, values)


def conform_records(schema: Schema, records: Iterable[Record], *, where: str = "") -> list[Record]:
    out = []
    seen: set[str] = set()
    for r in records:
        if not r.row_id or not isinstance(r.row_id, str):
            raise SchemaViolation(f"{where}row id must be a non-empty string, got {r.row_id!r}")
        if r.row_id in seen:
            raise SchemaViolation(f"{where}duplicate row id {r.row_id!r}")
        seen.add(r.row_id)
        out.append(conform_record(schema, r, where=where))
    return out
