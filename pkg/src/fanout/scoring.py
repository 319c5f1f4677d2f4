"""Structural scoring against a benchmark contract file.

A benchmark file names the tables a finished task must leave behind.
Every tier contributes three binary checks: presence (a live table with
that name exists), cardinality (its row count is exact), and integrity
(the content field is filled on every row, and when a reference table
is named, every row's source reference resolves to a real row of it).
The structural score is the mean of all checks; a missing table fails
all three of its tier's checks.  Scoring reads only the produced
catalog and the benchmark file, so identical runs score identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .tables.algebra import SOURCE_ROW_COL

BENCHMARK_FORMAT = "fanout-benchmark/1"
CHECKS = ("presence", "cardinality", "integrity")


@dataclass(frozen=True)
class TierSpec:
    name: str
    row_count: int | None = None
    content_field: str | None = None
    source_table: str | None = None


def load_benchmark(path: str | Path) -> list[TierSpec]:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"no benchmark file at {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"benchmark {path} is not valid JSON: "
                          f"{err}") from err
    if payload.get("format") != BENCHMARK_FORMAT:
        raise ConfigError(f"unsupported benchmark format "
                          f"{payload.get('format')!r}")
    tiers = []
    for entry in payload.get("tiers", []):
        if "name" not in entry:
            raise ConfigError(f"benchmark tier without a name: {entry!r}")
        tiers.append(TierSpec(entry["name"], entry.get("row_count"),
                              entry.get("content_field"),
                              entry.get("source_table")))
    if not tiers:
        raise ConfigError(f"benchmark {path} defines no tiers")
    return tiers


def _integrity(catalog, entry, tier: TierSpec) -> bool:
    records = catalog.records(entry.table_id)
    if tier.content_field is not None:
        if tier.content_field not in entry.schema.names():
            return False
        for rec in records:
            value = rec.values.get(tier.content_field)
            if value is None or (isinstance(value, str) and not value.strip()):
                return False
    if tier.source_table is not None:
        source = catalog.by_name(tier.source_table)
        if source is None or SOURCE_ROW_COL not in entry.schema.names():
            return False
        source_ids = {r.row_id for r in catalog.records(source.table_id)}
        for rec in records:
            if rec.values.get(SOURCE_ROW_COL) not in source_ids:
                return False
    return True


def score_structural(catalog, tiers: list[TierSpec]) -> dict:
    """Mean of binary checks; three per tier."""
    checks = []
    for tier in tiers:
        entry = catalog.by_name(tier.name)
        present = entry is not None
        cardinality = present and (tier.row_count is None
                                   or entry.row_count == tier.row_count)
        integrity = present and _integrity(catalog, entry, tier)
        checks.append({"tier": tier.name, "check": "presence",
                       "passed": present})
        checks.append({"tier": tier.name, "check": "cardinality",
                       "passed": bool(cardinality)})
        checks.append({"tier": tier.name, "check": "integrity",
                       "passed": bool(integrity)})
    passed = sum(1 for c in checks if c["passed"])
    return {"structural": passed / len(checks), "passed": passed,
            "total": len(checks), "checks": checks}
