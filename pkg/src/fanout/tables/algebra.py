"""Pure table operators.

Every operator maps dependency payloads ``(schema, records)`` to a new
payload without touching anything else: no I/O, no clocks, no randomness.
The catalog calls these at derive time and again, byte-for-byte, at
replay time, so any hidden state here would break lineage recovery.

Row identity: filter, project, rename_columns, add_computed, and
drop_columns preserve input row ids (row identity survives).  Operators
that construct new rows (union, join, group, results_with_source) derive
ids by hashing their inputs, which keeps replays and reruns stable.

Operator params are JSON-shaped and order-sensitive parts are lists, not
objects, so canonical (key-sorted) storage of a lineage node cannot
scramble them.
"""

from __future__ import annotations

import json
from typing import Any, Sequence

from ..errors import IncompatibleSchema, SchemaViolation
from ..ids import derived_row_id
from .predicate import Predicate, matches, validate_predicate
from .schema import (BLOB, BOOLEAN, INTEGER, REAL, SCALAR_TYPES, STRUCT, TEXT,
                     TEXT_LIST, Field, Record, Schema)
from .serialize import encode_value, key_text

Payload = tuple[Schema, list[Record]]

# Columns the fabric adds to every batch results table; results_with_source
# relies on them to find the way back to the source rows.
SUBTASK_COL = "__subtask_id"
SOURCE_TABLE_COL = "__source_table"
SOURCE_ROW_COL = "__source_row"
LINEAGE_COLS = (SUBTASK_COL, SOURCE_TABLE_COL, SOURCE_ROW_COL)


# Join/group key equality is canonical-encoding equality (serialize.key_text):
# hashing raw values would let Python's numeric == conflate values the
# canonical serialization keeps distinct, such as -0.0 and 0.0.
_key_part = key_text


def union(params: dict, deps: Sequence[Payload]) -> Payload:
    if not deps:
        raise IncompatibleSchema("union needs at least one dependency")
    first_schema = deps[0][0]
    base = {f.name: f.type for f in first_schema.fields}
    nullable = {f.name: f.nullable for f in first_schema.fields}
    for i, (schema, _) in enumerate(deps[1:], start=1):
        other = {f.name: f.type for f in schema.fields}
        if other != base:
            raise IncompatibleSchema(
                f"union dependency {i} has fields {sorted(other.items())}, "
                f"expected {sorted(base.items())}")
        for f in schema.fields:
            nullable[f.name] = nullable[f.name] or f.nullable
    out_schema = Schema(tuple(Field(f.name, f.type, nullable[f.name])
                              for f in first_schema.fields))
    out: list[Record] = []
    for i, (_, records) in enumerate(deps):
        for rec in records:
            rid = derived_row_id("u", str(i), rec.row_id)
            out.append(Record(rid, {n: rec.values.get(n) for n in base}))
    return out_schema, out


def filter_op(params: dict, deps: Sequence[Payload]) -> Payload:
    (schema, records), = deps
    pred = Predicate.from_payload(params["predicate"])
    validate_predicate(schema, pred)
    kept = [Record(r.row_id, dict(r.values)) for r in records
            if matches(schema, pred, r)]
    return schema, kept


def project(params: dict, deps: Sequence[Payload]) -> Payload:
    (schema, records), = deps
    columns = params["columns"]
    if not columns:
        raise IncompatibleSchema("projection needs at least one column")
    if len(set(columns)) != len(columns):
        raise IncompatibleSchema(f"duplicate columns in projection: {columns}")
    fields = tuple(schema.field(c) for c in columns)
    out_schema = Schema(fields)
    out = [Record(r.row_id, {c: r.values.get(c) for c in columns})
           for r in records]
    return out_schema, out


def join(params: dict, deps: Sequence[Payload]) -> Payload:
    (lschema, lrecords), (rschema, rrecords) = deps
    on = params["on"]
    if not on:
        raise IncompatibleSchema("join needs at least one key pair")
    pairs: list[tuple[str, str]] = []
    for item in on:
        if isinstance(item, str):
            pairs.append((item, item))
        else:
            pairs.append((item["left"], item["right"]))
    for lname, rname in pairs:
        lf, rf = lschema.field(lname), rschema.field(rname)
        if lf.type != rf.type:
            raise IncompatibleSchema(
                f"join key types differ: {lname}:{lf.type} vs {rname}:{rf.type}")
        if lf.type not in SCALAR_TYPES:
            raise IncompatibleSchema(f"join key {lname!r} has non-scalar type {lf.type}")

    right_keys = {r for _, r in pairs}
    left_names = set(lschema.names())
    fields = list(lschema.fields)
    right_out: list[tuple[str, str]] = []  # (source name, output name)
    taken = set(left_names)
    for f in rschema.fields:
        if f.name in right_keys:
            continue
        out_name = f.name if f.name not in left_names else f.name + "_r"
        if out_name in taken:
            raise IncompatibleSchema(
                f"join output column {out_name!r} collides; rename first")
        taken.add(out_name)
        right_out.append((f.name, out_name))
        fields.append(Field(out_name, f.type, f.nullable))
    out_schema = Schema(tuple(fields))

    index: dict[tuple, list[Record]] = {}
    rtypes = {f.name: f.type for f in rschema.fields}
    for rec in rrecords:
        if any(rec.values.get(r) is None for _, r in pairs):
            continue  # null keys never match
        key = tuple(_key_part(rtypes[r], rec.values.get(r)) for _, r in pairs)
        index.setdefault(key, []).append(rec)
    ltypes = {f.name: f.type for f in lschema.fields}
    out: list[Record] = []
    for lrec in lrecords:
        if any(lrec.values.get(l) is None for l, _ in pairs):
            continue
        key = tuple(_key_part(ltypes[l], lrec.values.get(l)) for l, _ in pairs)
        for rrec in index.get(key, ()):
            values = dict(lrec.values)
            for src, dst in right_out:
                values[dst] = rrec.values.get(src)
            out.append(Record(derived_row_id("j", lrec.row_id, rrec.row_id), values))
    return out_schema, out


_GROUP_OPS = ("first", "count", "collect")


def group(params: dict, deps: Sequence[Payload]) -> Payload:
    (schema, records), = deps
    keys: list[str] = params["keys"]
    aggs: list[list] = params["aggregations"]  # [out, op, field|None]
    key_fields = []
    for k in keys:
        f = schema.field(k)
        if f.type not in SCALAR_TYPES:
            raise IncompatibleSchema(f"group key {k!r} has non-scalar type {f.type}")
        key_fields.append(f)
    if not aggs:
        raise IncompatibleSchema("group needs at least one aggregation")
    out_fields = list(key_fields)
    taken = set(keys)
    for out_name, op, fname in aggs:
        if out_name in taken:
            raise IncompatibleSchema(f"aggregation output {out_name!r} collides")
        taken.add(out_name)
        if op == "count":
            out_fields.append(Field(out_name, INTEGER))
        elif op == "first":
            f = schema.field(fname)
            out_fields.append(Field(out_name, f.type, True))
        elif op == "collect":
            f = schema.field(fname)
            if f.type != TEXT:
                raise IncompatibleSchema(
                    f"collect needs a text field; {fname!r} is {f.type}")
            out_fields.append(Field(out_name, TEXT_LIST))
        else:
            raise IncompatibleSchema(f"unknown group aggregation {op!r}")
    out_schema = Schema(tuple(out_fields))

    ktypes = [f.type for f in key_fields]
    groups: dict[tuple, list[Record]] = {}
    for rec in records:  # groups ordered by first appearance
        key = tuple(_key_part(t, rec.values.get(k)) for k, t in zip(keys, ktypes))
        groups.setdefault(key, []).append(rec)
    out: list[Record] = []
    for key, members in groups.items():
        head = members[0]
        values: dict[str, Any] = {k: head.values.get(k) for k in keys}
        for out_name, op, fname in aggs:
            if op == "count":
                values[out_name] = len(members)
            elif op == "first":
                values[out_name] = head.values.get(fname)
            else:
                values[out_name] = [m.values[fname] for m in members
                                    if m.values.get(fname) is not None]
        out.append(Record(derived_row_id("g", *key), values))
    return out_schema, out


def rename_columns(params: dict, deps: Sequence[Payload]) -> Payload:
    (schema, records), = deps
    mapping: dict[str, str] = params["mapping"]
    for old in mapping:
        schema.field(old)
    new_names = [mapping.get(f.name, f.name) for f in schema.fields]
    if len(set(new_names)) != len(new_names):
        raise IncompatibleSchema(f"rename produces duplicate columns: {new_names}")
    out_schema = Schema(tuple(Field(n, f.type, f.nullable)
                              for n, f in zip(new_names, schema.fields)))
    out = [Record(r.row_id, {mapping.get(k, k): v for k, v in r.values.items()})
           for r in records]
    return out_schema, out


def drop_columns(params: dict, deps: Sequence[Payload]) -> Payload:
    (schema, records), = deps
    columns: list[str] = params["columns"]
    for c in columns:
        schema.field(c)
    keep = [f for f in schema.fields if f.name not in set(columns)]
    if not keep:
        raise IncompatibleSchema("cannot drop every column")
    out_schema = Schema(tuple(keep))
    names = [f.name for f in keep]
    out = [Record(r.row_id, {n: r.values.get(n) for n in names}) for r in records]
    return out_schema, out


_CASTABLE = {
    INTEGER: (INTEGER, REAL, TEXT),
    REAL: (INTEGER, REAL, TEXT),
    BOOLEAN: (BOOLEAN, TEXT),
    TEXT: (TEXT, INTEGER, REAL, BOOLEAN),
    BLOB: (BLOB, TEXT),
    STRUCT: (STRUCT, TEXT),
    TEXT_LIST: (TEXT_LIST, TEXT),
}


def _to_text(ftype: str, value: Any) -> str:
    if ftype == TEXT:
        return value
    if ftype == BOOLEAN:
        return "true" if value else "false"
    if ftype == BLOB:
        return value.id
    if ftype in (STRUCT, TEXT_LIST):
        return json.dumps(encode_value(STRUCT, value) if ftype == STRUCT else value,
                          sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return str(value)


def _cast(ftype: str, to: str, value: Any, ctx: str):
    if to == TEXT:
        return _to_text(ftype, value)
    if ftype == to:
        return value
    if ftype == INTEGER and to == REAL:
        return float(value)
    if ftype == REAL and to == INTEGER:
        return int(value)
    if ftype == TEXT:
        try:
            if to == INTEGER:
                return int(value)
            if to == REAL:
                return float(value)
            if to == BOOLEAN:
                if value in ("true", "false"):
                    return value == "true"
                raise ValueError(value)
        except ValueError:
            raise SchemaViolation(f"{ctx}: cannot cast {value!r} to {to}") from None
    raise IncompatibleSchema(f"unsupported cast {ftype} -> {to}")


def add_computed(params: dict, deps: Sequence[Payload]) -> Payload:
    (schema, records), = deps
    specs: list[dict] = params["columns"]
    if not specs:
        raise IncompatibleSchema("add_computed needs at least one column spec")
    fields = list(schema.fields)
    taken = set(schema.names())
    plans: list[tuple[str, str, dict, Field]] = []
    for spec in specs:
        name, op = spec.get("name"), spec.get("op")
        if not name or name in taken:
            raise IncompatibleSchema(f"computed column name {name!r} missing or taken")
        taken.add(name)
        if op == "cast":
            src = schema.field(spec["field"])
            to = spec["to"]
            if to not in _CASTABLE.get(src.type, ()):
                raise IncompatibleSchema(f"unsupported cast {src.type} -> {to}")
            out_f = Field(name, to, src.nullable)
        elif op == "concat":
            for fn in spec["fields"]:
                schema.field(fn)
            out_f = Field(name, TEXT)
        elif op == "coalesce":
            srcs = [schema.field(fn) for fn in spec["fields"]]
            if not srcs:
                raise IncompatibleSchema("coalesce needs at least one field")
            if len({s.type for s in srcs}) != 1:
                raise IncompatibleSchema(
                    f"coalesce fields must share a type: {[s.type for s in srcs]}")
            out_f = Field(name, srcs[0].type, all(s.nullable for s in srcs))
        elif op == "extract_key":
            src = schema.field(spec["field"])
            if src.type != STRUCT:
                raise IncompatibleSchema(
                    f"extract_key needs a struct field; {spec['field']!r} is {src.type}")
            out_f = Field(name, STRUCT, True)
        elif op == "first_element":
            src = schema.field(spec["field"])
            if src.type != TEXT_LIST:
                raise IncompatibleSchema(
                    f"first_element needs a text_list field; {spec['field']!r} is {src.type}")
            out_f = Field(name, TEXT, True)
        else:
            raise IncompatibleSchema(f"unknown computed op {op!r}")
        plans.append((name, op, spec, out_f))
        fields.append(out_f)
    out_schema = Schema(tuple(fields))

    types = {f.name: f.type for f in schema.fields}
    out: list[Record] = []
    for rec in records:
        values = dict(rec.values)
        for name, op, spec, _ in plans:
            if op == "cast":
                v = values.get(spec["field"])
                values[name] = None if v is None else _cast(
                    types[spec["field"]], spec["to"], v, f"row {rec.row_id!r}")
            elif op == "concat":
                sep = spec.get("sep", "")
                parts = []
                for fn in spec["fields"]:
                    v = values.get(fn)
                    parts.append("" if v is None else _to_text(types[fn], v))
                values[name] = sep.join(parts)
            elif op == "coalesce":
                values[name] = next(
                    (values[fn] for fn in spec["fields"] if values.get(fn) is not None),
                    None)
            elif op == "extract_key":
                v = values.get(spec["field"])
                values[name] = v.get(spec["key"]) if isinstance(v, dict) else None
            else:  # first_element
                v = values.get(spec["field"])
                values[name] = v[0] if v else None
        out.append(Record(rec.row_id, values))
    return out_schema, out


def results_with_source(params: dict, deps: Sequence[Payload]) -> Payload:
    (rschema, rrecords), (sschema, srecords) = deps
    source_table = params["source_table"]
    for col in LINEAGE_COLS:
        if not rschema.has(col):
            raise IncompatibleSchema(
                f"first dependency is not a results table: missing {col!r}")
    result_names = set(rschema.names())
    fields = list(rschema.fields)
    src_out: list[tuple[str, str]] = []
    taken = set(result_names)
    for f in sschema.fields:
        out_name = f.name if f.name not in result_names else f.name + "_r"
        if out_name in taken:
            raise IncompatibleSchema(
                f"results_with_source output column {out_name!r} collides")
        taken.add(out_name)
        src_out.append((f.name, out_name))
        # Source side is nullable-preserving; the join is inner so no new nulls.
        fields.append(Field(out_name, f.type, f.nullable))
    out_schema = Schema(tuple(fields))

    by_id = {rec.row_id: rec for rec in srecords}
    out: list[Record] = []
    for rec in rrecords:
        if rec.values.get(SOURCE_TABLE_COL) != source_table:
            continue
        src = by_id.get(rec.values.get(SOURCE_ROW_COL))
        if src is None:
            continue  # orphan: source row vanished
        values = dict(rec.values)
        for s, d in src_out:
            values[d] = src.values.get(s)
        out.append(Record(rec.row_id, values))
    return out_schema, out


OPERATORS = {
    "union": union,
    "filter": filter_op,
    "project": project,
    "join": join,
    "group": group,
    "rename_columns": rename_columns,
    "add_computed": add_computed,
    "drop_columns": drop_columns,
    "results_with_source": results_with_source,
}

# dependency arity per operator; None means one-or-more
_ARITY = {"union": None, "filter": 1, "project": 1, "join": 2, "group": 1,
          "rename_columns": 1, "add_computed": 1, "drop_columns": 1,
          "results_with_source": 2}


def apply(op: str, params: dict, deps: Sequence[Payload]) -> Payload:
    if op not in OPERATORS:
        raise IncompatibleSchema(f"unknown operator {op!r}")
    arity = _ARITY[op]
    if arity is not None and len(deps) != arity:
        raise IncompatibleSchema(f"{op} takes {arity} dependencies, got {len(deps)}")
    return OPERATORS[op](params, deps)
