"""Immutable, schema-typed, lineage-tracked data tables."""

from .analytics import Analytics
from .catalog import (KIND_DERIVED, KIND_LEAF, KIND_RESULTS, LineageNode,
                      TableCatalog, TableEntry)
from .digest import MIN_BUDGET, TableDigest, build_digest
from .predicate import Clause, Predicate
from .schema import (BLOB, BOOLEAN, FIELD_TYPES, INTEGER, REAL, STRUCT, TEXT,
                     TEXT_LIST, Field, Record, Schema, conform_record,
                     conform_records)
from .serialize import from_canonical_bytes, to_canonical_bytes

__all__ = [
    "Analytics", "TableCatalog", "TableEntry", "LineageNode", "TableDigest",
    "build_digest", "MIN_BUDGET", "Clause", "Predicate", "Field", "Record",
    "Schema", "conform_record", "conform_records", "from_canonical_bytes",
    "to_canonical_bytes", "KIND_LEAF", "KIND_DERIVED", "KIND_RESULTS",
    "TEXT", "INTEGER", "REAL", "BOOLEAN", "BLOB", "STRUCT", "TEXT_LIST",
    "FIELD_TYPES",
]
