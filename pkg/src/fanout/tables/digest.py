"""Compact table digests.

A digest is what the manager sees instead of raw rows: identity, exact
row count, the full schema, per-field null counts, and a few clipped
sample values.  Serialized size must stay within a caller byte budget;
the builder degrades by shedding samples before it ever errors.  The
budget floor is MIN_BUDGET bytes; below that not even the identity line
fits and the call is refused.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from ..errors import DigestBudgetError
from .schema import Record, Schema
from .serialize import render_value

MIN_BUDGET = 256
_SAMPLES_MAX = 3
_SAMPLE_CHARS = 48


@dataclass(frozen=True)
class TableDigest:
    table_id: str
    name: str
    kind: str
    row_count: int
    schema: Schema
    null_counts: dict[str, int]
    samples: dict[str, list[str]]

    def to_payload(self) -> dict:
        return {
            "id": self.table_id,
            "name": self.name,
            "kind": self.kind,
            "rows": self.row_count,
            "schema": self.schema.to_payload(),
            "nulls": self.null_counts,
            "samples": self.samples,
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_payload(), sort_keys=True,
                          separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def build_digest(table_id: str, name: str, kind: str, schema: Schema,
                 records: Sequence[Record], byte_budget: int) -> TableDigest:
    if byte_budget < MIN_BUDGET:
        raise DigestBudgetError(
            f"digest budget {byte_budget} below the documented minimum {MIN_BUDGET}")
    null_counts = {}
    for f in schema.fields:
        null_counts[f.name] = sum(1 for r in records if r.values.get(f.name) is None)

    for k in range(_SAMPLES_MAX, -1, -1):
        samples: dict[str, list[str]] = {}
        for f in schema.fields:
            picked: list[str] = []
            for r in records:
                v = r.values.get(f.name)
                if v is None:
                    continue
                picked.append(render_value(f.type, v, _SAMPLE_CHARS))
                if len(picked) >= k:
                    break
            samples[f.name] = picked
        digest = TableDigest(table_id, name, kind, len(records), schema,
                             null_counts, samples)
        if len(digest.to_bytes()) <= byte_budget:
            return digest
    raise DigestBudgetError(
        f"table {table_id} digest cannot fit {byte_budget} bytes even without samples; "
        f"schema alone is too large")
