"""Canonical table serialization.

Format ``fanout-table/1``: UTF-8 JSON lines.  The first line is a header
object carrying the format tag and the schema (fields in schema order);
every following line is one record as a two-element array
``[row_id, [v0, v1, ...]]`` with values in schema order.  Records are
sorted by row id (codepoint order), object keys are sorted, and
separators are fixed, so equal table content always yields equal bytes.
The table's id and display name are deliberately not part of the
encoding: deriving the same operator twice must produce byte-identical
serializations.

Value encoding per type: text, integer, boolean, and list-of-text are
plain JSON; reals are finite JSON numbers; a blob reference becomes
``{"b": [id, size, hint]}``; a structured value becomes ``{"j": value}``;
null is JSON null.
"""

from __future__ import annotations

import json
from typing import Any, Iterable

from ..blobs.store import BlobRef
from ..errors import SchemaViolation
from .schema import BLOB, STRUCT, Record, Schema

FORMAT = "fanout-table/1"


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False)


def encode_value(ftype: str, value: Any) -> Any:
    if value is None:
        return None
    if ftype == BLOB:
        return {"b": value.to_payload()}
    if ftype == STRUCT:
        return {"j": value}
    return value


def decode_value(ftype: str, raw: Any) -> Any:
    if raw is None:
        return None
    if ftype == BLOB:
        return BlobRef.from_payload(raw["b"])
    if ftype == STRUCT:
        return raw["j"]
    return raw


def to_canonical_bytes(schema: Schema, records: Iterable[Record]) -> bytes:
    header = {"format": FORMAT, "schema": schema.to_payload()}
    lines = [_dumps(header)]
    ordered = sorted(records, key=lambda r: r.row_id)
    types = [f.type for f in schema.fields]
    names = schema.names()
    for rec in ordered:
        row = [encode_value(t, rec.values.get(n)) for n, t in zip(names, types)]
        lines.append(_dumps([rec.row_id, row]))
    return ("\n".join(lines) + "\n").encode("utf-8")


def from_canonical_bytes(data: bytes) -> tuple[Schema, list[Record]]:
    lines = data.decode("utf-8").splitlines()
    if not lines:
        raise SchemaViolation("empty table serialization")
    header = json.loads(lines[0])
    if header.get("format") != FORMAT:
        raise SchemaViolation(f"unsupported table format {header.get('format')!r}")
    schema = Schema.from_payload(header["schema"])
    types = [f.type for f in schema.fields]
    names = schema.names()
    records = []
    for line in lines[1:]:
        row_id, raw = json.loads(line)
        values = {n: decode_value(t, v) for n, t, v in zip(names, types, raw)}
        records.append(Record(row_id, values))
    return schema, records


def key_text(ftype: str, value: Any) -> str:
    """Canonical single-value encoding used for join/group key equality.

    Equality on these strings is the one notion of value equality that
    agrees with the canonical serialization (it keeps -0.0 and 0.0
    distinct, unlike Python's numeric ==).
    """
    return _dumps(encode_value(ftype, value))


def render_value(ftype: str, value: Any, limit: int = 48) -> str:
    """Short human-readable rendering for digests and previews."""
    if value is None:
        return "null"
    if ftype == BLOB:
        text = f"blob:{value.id[:8]}({value.size}B)"
    elif isinstance(value, str):
        text = value
    else:
        text = _dumps(encode_value(ftype, value))
    if len(text) > limit:
        text = text[: limit - 1] + "…"
    return text
