from __future__ import annotations

import pytest

from fanout.blobs import BlobStore
from fanout.tables import Record, Schema, TableCatalog


@pytest.fixture
def blobs(tmp_path):
    return BlobStore(tmp_path / "blobs")


@pytest.fixture
def catalog(blobs):
    return TableCatalog(blobs)


def make_people_schema() -> Schema:
    return Schema.of(
        ("name", "text"),
        ("age", "integer"),
        ("score", "real", True),
        ("active", "boolean"),
        ("tags", "text_list"),
        ("meta", "struct", True),
    )


def make_people_records() -> list[Record]:
    rows = [
        ("p01", "ada", 36, 91.5, True, ["math", "lead"], {"city": "london"}),
        ("p02", "bob", 41, None, False, [], None),
        ("p03", "cyd", 29, 77.25, True, ["ops"], {"city": "oslo", "n": 2}),
        ("p04", "dee", 36, 91.5, False, ["math"], None),
        ("p05", "eli", 50, 12.0, True, ["ops", "lead"], {"city": "london"}),
    ]
    return [
        Record(rid, {"name": n, "age": a, "score": s, "active": act,
                     "tags": t, "meta": m})
        for rid, n, a, s, act, t, m in rows
    ]


@pytest.fixture
def people(catalog):
    return catalog.register_leaf_table(
        "people", make_people_schema(), make_people_records())
