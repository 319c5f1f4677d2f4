"""Strict output validation with a complete complaint list.

Unlike row conformance inside the table layer, which stops at the first
problem, worker output validation reports every offending field at
once: the leader (or whoever reads the failure) should not need three
round trips to learn about three mistakes.
"""

from __future__ import annotations

import json
import math
from typing import Any

from ..blobs import BlobRef
from ..errors import WorkerFailure
from ..tables.schema import BLOB, REAL, Schema, _check_value


def _as_blob_ref(value: Any) -> BlobRef | None:
    if isinstance(value, BlobRef):
        return value
    if isinstance(value, (list, tuple)) and len(value) == 3:
        try:
            return BlobRef.from_payload(list(value))
        except (TypeError, ValueError):
            return None
    return None


def validate_output(payload: Any, schema: Schema) -> dict:
    """Return conformed values or raise one report naming every fault."""
    if isinstance(payload, (bytes, str)):
        try:
            payload = json.loads(payload)
        except ValueError as err:
            raise WorkerFailure(f"output is not valid JSON: {err}") from err
    if not isinstance(payload, dict):
        raise WorkerFailure(f"output must be a JSON object, got "
                            f"{type(payload).__name__}")
    problems: list[str] = []
    values: dict[str, Any] = {}
    for name in sorted(set(payload) - set(schema.names())):
        problems.append(f"field {name!r} is not in the output schema")
    for field in schema.fields:
        value = payload.get(field.name)
        if value is None:
            if field.nullable:
                values[field.name] = None
            else:
                kind = ("is null" if field.name in payload else "is missing")
                problems.append(f"non-nullable field {field.name!r} {kind}")
            continue
        if field.type == BLOB:
            ref = _as_blob_ref(value)
            if ref is None:
                problems.append(f"field {field.name!r} expects a blob "
                                f"reference [id, size, hint]")
            else:
                values[field.name] = ref
            continue
        if not _check_value(field.type, value):
            problems.append(f"field {field.name!r} expects {field.type}, "
                            f"got {type(value).__name__}")
            continue
        if field.type == REAL:
            value = float(value)
            if not math.isfinite(value):
                problems.append(f"field {field.name!r} must be finite")
                continue
        values[field.name] = value
    if problems:
        raise WorkerFailure("output failed validation: " +
                            "; ".join(problems))
    return values
