from __future__ import annotations

import pytest

from fanout.errors import DigestBudgetError
from fanout.tables import Record, Schema
from fanout.tables.digest import MIN_BUDGET, build_digest


def test_digest_reports_shape_and_nulls(catalog, people) -> None:
    d = catalog.digest(people.table_id, 4096)
    assert d.table_id == people.table_id
    assert d.name == "people"
    assert d.row_count == 5
    assert d.null_counts["score"] == 1
    assert d.null_counts["meta"] == 2
    assert d.null_counts["name"] == 0


def test_digest_samples_come_from_leading_rows(catalog, people) -> None:
    d = catalog.digest(people.table_id, 4096)
    assert d.samples["name"][0] == "ada"
    assert len(d.samples["name"]) <= 3


def test_digest_fits_its_byte_budget(catalog, people) -> None:
    for budget in (4096, 1024, 520, 460):
        d = catalog.digest(people.table_id, budget)
        assert len(d.to_bytes()) <= budget


def test_digest_shrinks_samples_under_pressure(catalog, people) -> None:
    wide = catalog.digest(people.table_id, 4096)
    tight = catalog.digest(people.table_id, 460)
    assert sum(map(len, tight.samples.values())) < \
        sum(map(len, wide.samples.values()))


def test_digest_rejects_budget_below_floor(catalog, people) -> None:
    with pytest.raises(DigestBudgetError):
        catalog.digest(people.table_id, MIN_BUDGET - 1)


def test_digest_of_empty_table(catalog) -> None:
    t = catalog.register_leaf_table("empty", Schema.of(("a", "text")), [])
    d = catalog.digest(t.table_id, 1024)
    assert d.row_count == 0
    assert d.samples["a"] == []
    assert d.null_counts["a"] == 0


def test_digest_is_deterministic(catalog, people) -> None:
    a = catalog.digest(people.table_id, 2048).to_bytes()
    b = catalog.digest(people.table_id, 2048).to_bytes()
    assert a == b


def test_digest_truncates_long_values(catalog) -> None:
    t = catalog.register_leaf_table(
        "long", Schema.of(("body", "text")),
        [Record("r1", {"body": "x" * 500})])
    d = catalog.digest(t.table_id, 1024)
    assert len(d.samples["body"][0]) < 500
