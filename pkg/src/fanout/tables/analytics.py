"""Read-only queries over catalog tables.

Everything here returns payloads, never new tables; derivation is the
algebra's job.  Listings paginate with a stable order (table order, i.e.
row-id order) so repeated calls with the same arguments see the same
pages.  Nulls are excluded from distinct values and value counts; their
population is visible through digests and null counts instead.
"""

from __future__ import annotations

import random
from typing import Any, Sequence

from ..errors import IncompatibleSchema, PredicateError, UnknownRow
from .catalog import TableCatalog
from .predicate import Predicate, matches, validate_predicate
from .schema import BLOB, NUMERIC_TYPES, SCALAR_TYPES, TEXT, Record, Schema
from .serialize import encode_value, key_text


def _page(items: Sequence, page: int, page_size: int) -> dict:
    if page < 1 or page_size < 1:
        raise PredicateError(f"page and page_size must be positive, got {page}/{page_size}")
    start = (page - 1) * page_size
    return {"page": page, "page_size": page_size, "total": len(items),
            "items": list(items[start:start + page_size])}


def _row_payload(schema: Schema, rec: Record, columns: Sequence[str] | None) -> dict:
    names = columns if columns else schema.names()
    types = {f.name: f.type for f in schema.fields}
    return {"id": rec.row_id,
            "values": {n: encode_value(types[n], rec.values.get(n)) for n in names}}


class Analytics:
    def __init__(self, catalog: TableCatalog) -> None:
        self.catalog = catalog

    def _table(self, ref: str) -> tuple[Schema, list[Record]]:
        entry = self.catalog.resolve(ref)
        return entry.schema, self.catalog.records(entry.table_id)

    def _filtered(self, ref: str, predicate: Any | None) -> tuple[Schema, list[Record]]:
        schema, records = self._table(ref)
        if predicate is None:
            return schema, records
        pred = predicate if isinstance(predicate, Predicate) else Predicate.from_payload(predicate)
        validate_predicate(schema, pred)
        return schema, [r for r in records if matches(schema, pred, r)]

    def preview_rows(self, ref: str, page: int = 1, page_size: int = 10,
                     columns: Sequence[str] | None = None) -> dict:
        schema, records = self._table(ref)
        for c in columns or ():
            schema.field(c)
        out = _page(records, page, page_size)
        out["items"] = [_row_payload(schema, r, columns) for r in out["items"]]
        return out

    def get_row(self, ref: str, row_id: str,
                columns: Sequence[str] | None = None) -> dict:
        schema, records = self._table(ref)
        for c in columns or ():
            schema.field(c)
        for rec in records:
            if rec.row_id == row_id:
                return _row_payload(schema, rec, columns)
        raise UnknownRow(f"no row {row_id!r} in table {ref!r}")

    def filter_rows(self, ref: str, predicate: Any, page: int = 1,
                    page_size: int = 10,
                    columns: Sequence[str] | None = None) -> dict:
        schema, records = self._filtered(ref, predicate)
        for c in columns or ():
            schema.field(c)
        out = _page(records, page, page_size)
        out["items"] = [_row_payload(schema, r, columns) for r in out["items"]]
        return out

    def distinct_values(self, ref: str, field: str, predicate: Any = None,
                        page: int = 1, page_size: int = 20) -> dict:
        schema, records = self._filtered(ref, predicate)
        f = schema.field(field)
        if f.type not in SCALAR_TYPES:
            raise IncompatibleSchema(f"distinct_values needs a scalar field; "
                                     f"{field!r} is {f.type}")
        counts: dict[Any, int] = {}
        for rec in records:
            v = rec.values.get(field)
            if v is None:
                continue
            key = v.id if f.type == BLOB else v
            counts[key] = counts.get(key, 0) + 1
        ordered = sorted(counts.items(), key=lambda kv: kv[0])
        out = _page(ordered, page, page_size)
        out["items"] = [{"value": v, "count": c} for v, c in out["items"]]
        return out

    def value_counts(self, ref: str, field: str, k: int = 10,
                     predicate: Any = None) -> dict:
        """Top-k values by descending count; ties break by ascending value."""
        schema, records = self._filtered(ref, predicate)
        f = schema.field(field)
        if f.type not in SCALAR_TYPES:
            raise IncompatibleSchema(f"value_counts needs a scalar field; "
                                     f"{field!r} is {f.type}")
        counts: dict[Any, int] = {}
        for rec in records:
            v = rec.values.get(field)
            if v is None:
                continue
            key = v.id if f.type == BLOB else v
            counts[key] = counts.get(key, 0) + 1
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return {"field": field, "k": k,
                "items": [{"value": v, "count": c} for v, c in ordered[:k]]}

    def summarize_numeric(self, ref: str, fields: Sequence[str],
                          predicate: Any = None) -> dict:
        """Count/min/max/mean/population-stddev per field, nulls skipped.

        Welford's update keeps the variance numerically stable; the test
        suite checks it against a naive sum-of-squares oracle.
        """
        schema, records = self._filtered(ref, predicate)
        out: dict[str, dict] = {}
        for field in fields:
            f = schema.field(field)
            if f.type not in NUMERIC_TYPES:
                raise IncompatibleSchema(
                    f"summarize_numeric needs numeric fields; {field!r} is {f.type}")
            n = 0
            mean = 0.0
            m2 = 0.0
            lo: float | None = None
            hi: float | None = None
            for rec in records:
                v = rec.values.get(field)
                if v is None:
                    continue
                x = float(v)
                n += 1
                delta = x - mean
                mean += delta / n
                m2 += delta * (x - mean)
                lo = x if lo is None or x < lo else lo
                hi = x if hi is None or x > hi else hi
            if n == 0:
                out[field] = {"count": 0, "min": None, "max": None,
                              "mean": None, "stddev": None}
            else:
                out[field] = {"count": n, "min": lo, "max": hi, "mean": mean,
                              "stddev": (m2 / n) ** 0.5}
        return out

    def groupby_aggregate(self, ref: str, keys: Sequence[str],
                          aggregations: dict[str, dict] | Sequence,
                          predicate: Any = None, page: int = 1,
                          page_size: int = 50) -> dict:
        """Grouped aggregation payload: count, count_distinct, sum, avg,
        min, max.  Groups are ordered by their key tuple."""
        schema, records = self._filtered(ref, predicate)
        if isinstance(aggregations, dict):
            aggs = [[out, spec["op"], spec.get("field")]
                    for out, spec in aggregations.items()]
        else:
            aggs = [list(a) for a in aggregations]
        key_types = []
        for kname in keys:
            f = schema.field(kname)
            if f.type not in SCALAR_TYPES:
                raise IncompatibleSchema(f"group key {kname!r} has non-scalar type {f.type}")
            key_types.append(f.type)
        taken = set(keys)
        for out_name, op, fname in aggs:
            if out_name in taken:
                raise IncompatibleSchema(f"aggregation output {out_name!r} collides")
            taken.add(out_name)
            if op not in ("count", "count_distinct", "sum", "avg", "min", "max"):
                raise IncompatibleSchema(f"unknown aggregation {op!r}")
            if op == "count":
                continue
            f = schema.field(fname)
            if op in ("sum", "avg") and f.type not in NUMERIC_TYPES:
                raise IncompatibleSchema(f"{op} needs a numeric field; "
                                         f"{fname!r} is {f.type}")
            if op in ("min", "max") and f.type not in (TEXT, *NUMERIC_TYPES):
                raise IncompatibleSchema(f"{op} needs an orderable field; "
                                         f"{fname!r} is {f.type}")

        def _gkey(rec: Record) -> tuple:
            # canonical-encoded parts, consistent with the derive-side group
            return tuple(key_text(t, rec.values.get(k))
                         for k, t in zip(keys, key_types))

        groups: dict[tuple, list[Record]] = {}
        for rec in records:
            groups.setdefault(_gkey(rec), []).append(rec)

        rows = []
        for key, members in sorted(groups.items()):
            head = members[0]
            row: dict[str, Any] = {}
            for k, t in zip(keys, key_types):
                v = head.values.get(k)
                row[k] = v.id if t == BLOB and v is not None else v
            for out_name, op, fname in aggs:
                if op == "count":
                    row[out_name] = len(members)
                    continue
                vals = [m.values[fname] for m in members
                        if m.values.get(fname) is not None]
                if op == "count_distinct":
                    row[out_name] = len({v.id if hasattr(v, "id") else v for v in vals})
                elif not vals:
                    row[out_name] = None
                elif op == "sum":
                    row[out_name] = sum(vals)
                elif op == "avg":
                    row[out_name] = sum(vals) / len(vals)
                elif op == "min":
                    row[out_name] = min(vals)
                else:
                    row[out_name] = max(vals)
            rows.append(row)
        return _page(rows, page, page_size)

    def sample_rows(self, ref: str, n: int, seed: int = 0,
                    columns: Sequence[str] | None = None) -> dict:
        """Uniform sample without replacement; seeded, so the default is
        deterministic and callers vary the seed to vary the draw."""
        schema, records = self._table(ref)
        for c in columns or ():
            schema.field(c)
        if n >= len(records):
            picked = list(records)
        else:
            picked = random.Random(seed).sample(records, n)
        return {"seed": seed, "total": len(records),
                "items": [_row_payload(schema, r, columns) for r in picked]}
