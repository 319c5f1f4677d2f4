"""Leaf ingestion from files.

Two input shapes: delimited text (CSV with a header row) and
line-delimited JSON records.  Ingestion is schema-first when a schema is
supplied; otherwise CSV columns are all nullable text and JSONL types
are inferred from the first occurrence of each field.  Row ids come from
``id_field`` when given (the column stays in the data), else they are
assigned ``r000001``-style in input order.

A JSONL cell may encode a blob reference as ``{"$blob": [id, size,
hint]}`` when the schema calls the field a blob; ingestion never uploads
blob content itself.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable

from ..blobs.store import BlobRef
from ..errors import SchemaViolation
from .schema import (BLOB, BOOLEAN, INTEGER, REAL, STRUCT, TEXT, TEXT_LIST,
                     Field, Record, Schema)


def _auto_ids(n: int) -> str:
    return f"r{n:06d}"


def _decode_cell(ftype: str, raw: Any) -> Any:
    if raw is None:
        return None
    if ftype == BLOB:
        if isinstance(raw, dict) and "$blob" in raw:
            return BlobRef.from_payload(raw["$blob"])
        raise SchemaViolation(f"blob field expects {{'$blob': [id, size, hint]}}, got {raw!r}")
    return raw


def _infer_type(value: Any) -> str:
    if isinstance(value, bool):
        return BOOLEAN
    if isinstance(value, int):
        return INTEGER
    if isinstance(value, float):
        return REAL
    if isinstance(value, str):
        return TEXT
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return TEXT_LIST
    if isinstance(value, dict) and "$blob" in value:
        return BLOB
    return STRUCT


def read_jsonl(path: str | Path, schema: Schema | None = None,
               id_field: str | None = None) -> tuple[Schema, list[Record]]:
    rows: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise SchemaViolation(f"{path}:{i}: record must be an object")
            rows.append(obj)
    if schema is None:
        schema = _infer_schema(rows)
    return schema, _build_records(schema, rows, id_field)


def _infer_schema(rows: Iterable[dict]) -> Schema:
    types: dict[str, str] = {}
    for obj in rows:
        for k, v in obj.items():
            if k not in types and v is not None:
                types[k] = _infer_type(v)
            elif v is not None and types.get(k) == INTEGER and isinstance(v, float):
                types[k] = REAL
    if not types:
        raise SchemaViolation("cannot infer a schema from no data")
    # Inference cannot prove absence of nulls, so everything is nullable.
    return Schema(tuple(Field(name, t, True) for name, t in types.items()))


def _build_records(schema: Schema, rows: list[dict],
                   id_field: str | None) -> list[Record]:
    records = []
    for n, obj in enumerate(rows, start=1):
        if id_field is not None:
            if id_field not in obj:
                raise SchemaViolation(f"record {n} is missing id field {id_field!r}")
            row_id = str(obj[id_field])
        else:
            row_id = _auto_ids(n)
        values = {f.name: _decode_cell(f.type, obj.get(f.name))
                  for f in schema.fields if f.name in obj}
        records.append(Record(row_id, values))
    return records


def read_delimited(path: str | Path, schema: Schema | None = None,
                   id_field: str | None = None,
                   delimiter: str = ",") -> tuple[Schema, list[Record]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise SchemaViolation(f"{path}: missing header row")
        raw_rows = list(reader)
    if schema is None:
        schema = Schema(tuple(Field(name, TEXT, True) for name in reader.fieldnames))
    rows = [_cast_csv_row(schema, row, i) for i, row in enumerate(raw_rows, start=2)]
    return schema, _build_records(schema, rows, id_field)


def _cast_csv_row(schema: Schema, row: dict[str, str], lineno: int) -> dict:
    out: dict[str, Any] = {}
    for f in schema.fields:
        if f.name not in row:
            continue
        raw = row[f.name]
        if raw is None or raw == "":
            out[f.name] = None
            continue
        try:
            if f.type == TEXT:
                out[f.name] = raw
            elif f.type == INTEGER:
                out[f.name] = int(raw)
            elif f.type == REAL:
                out[f.name] = float(raw)
            elif f.type == BOOLEAN:
                if raw not in ("true", "false"):
                    raise ValueError(raw)
                out[f.name] = raw == "true"
            elif f.type in (STRUCT, TEXT_LIST):
                out[f.name] = json.loads(raw)
            else:
                raise ValueError(f"cannot ingest {f.type} from delimited text")
        except ValueError as exc:
            raise SchemaViolation(
                f"line {lineno}: field {f.name!r}: cannot read {raw!r} as {f.type}"
            ) from exc
    return out
