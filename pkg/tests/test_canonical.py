from __future__ import annotations

import json

from fanout.blobs import BlobRef
from fanout.tables import (Record, Schema, from_canonical_bytes,
                           to_canonical_bytes)


def _schema() -> Schema:
    return Schema.of(("name", "text"), ("n", "integer", True),
                     ("r", "real"), ("ok", "boolean"),
                     ("doc", "blob", True), ("meta", "struct", True),
                     ("tags", "text_list"))


def _records() -> list[Record]:
    ref = BlobRef("ab" * 32, 10, "text/plain")
    return [
        Record("b", {"name": "two", "n": None, "r": 2.5, "ok": False,
                     "doc": None, "meta": {"z": 1, "a": [1, 2]}, "tags": []}),
        Record("a", {"name": "one", "n": 7, "r": -0.125, "ok": True,
                     "doc": ref, "meta": None, "tags": ["x", "y"]}),
    ]


def test_round_trip_preserves_everything() -> None:
    schema = _schema()
    data = to_canonical_bytes(schema, _records())
    schema2, records2 = from_canonical_bytes(data)
    assert schema2 == schema
    by_id = {r.row_id: r.values for r in records2}
    orig = {r.row_id: r.values for r in _records()}
    assert by_id == orig


def test_records_are_sorted_by_row_id() -> None:
    data = to_canonical_bytes(_schema(), _records())
    lines = data.decode().splitlines()
    ids = [json.loads(line)[0] for line in lines[1:]]
    assert ids == sorted(ids) == ["a", "b"]


def test_bytes_do_not_depend_on_input_order_or_dict_key_order() -> None:
    schema = _schema()
    recs = _records()
    a = to_canonical_bytes(schema, recs)
    b = to_canonical_bytes(schema, list(reversed(recs)))
    # same struct value with different insertion order
    recs2 = [Record(r.row_id, dict(r.values)) for r in recs]
    recs2[0].values["meta"] = {"a": [1, 2], "z": 1}
    c = to_canonical_bytes(schema, recs2)
    assert a == b == c


def test_header_carries_format_and_schema_order() -> None:
    data = to_canonical_bytes(_schema(), [])
    header = json.loads(data.decode().splitlines()[0])
    assert header["format"] == "fanout-table/1"
    assert [f[0] for f in header["schema"]] == ["name", "n", "r", "ok", "doc",
                                                "meta", "tags"]


def test_empty_table_is_just_a_header() -> None:
    data = to_canonical_bytes(Schema.of(("a", "text")), [])
    assert data.decode().count("\n") == 1
