"""Table catalog: immutable tables, lineage, materialization, replay.

Every table is either a leaf (registered records, grounded in blob-store
refs) or a derivation (operator + params + ordered dependencies).  Both
are materialized eagerly: the canonical serialization is written to the
blob store at creation time.  The lineage graph is append-only and a DAG
by construction; replay re-runs the same operator code over the leaf
blobs, so a replayed table is byte-identical to the original.

Renaming changes the display name only; table ids never change.
Archiving hides a table from the live namespace without touching its
data, and archived tables remain valid operator dependencies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..blobs.store import BlobRef, BlobStore
from ..errors import (BlobNotFound, LineageCycle, NameCollision, UnknownTable,
                      UnrecoverableLineage)
from . import algebra
from .digest import TableDigest, build_digest
from .schema import Record, Schema, conform_records
from .serialize import from_canonical_bytes, to_canonical_bytes

KIND_LEAF = "leaf"
KIND_DERIVED = "derived"
KIND_RESULTS = "results"

SNAPSHOT_FORMAT = "fanout-catalog/1"
MANIFEST_FORMAT = "fanout-leaf-manifest/1"


@dataclass(frozen=True)
class LineageNode:
    operator: str                       # "leaf" for registered tables
    params: dict
    deps: tuple[str, ...]               # ordered dependency table ids
    source_refs: tuple[BlobRef, ...]    # leaves: [data blob, *provenance]

    def to_payload(self) -> dict:
        return {"operator": self.operator, "params": self.params,
                "deps": list(self.deps),
                "source_refs": [r.to_payload() for r in self.source_refs]}

    @classmethod
    def from_payload(cls, p: dict) -> "LineageNode":
        return cls(p["operator"], p["params"], tuple(p["deps"]),
                   tuple(BlobRef.from_payload(r) for r in p["source_refs"]))


@dataclass
class TableEntry:
    table_id: str
    name: str
    kind: str
    schema: Schema
    row_count: int
    lineage: LineageNode
    data_ref: BlobRef | None            # cached materialization; None = evicted
    archived: bool = False

    def to_payload(self) -> dict:
        return {"id": self.table_id, "name": self.name, "kind": self.kind,
                "schema": self.schema.to_payload(), "rows": self.row_count,
                "lineage": self.lineage.to_payload(),
                "data": self.data_ref.to_payload() if self.data_ref else None,
                "archived": self.archived}

    @classmethod
    def from_payload(cls, p: dict) -> "TableEntry":
        return cls(p["id"], p["name"], p["kind"], Schema.from_payload(p["schema"]),
                   p["rows"], LineageNode.from_payload(p["lineage"]),
                   BlobRef.from_payload(p["data"]) if p["data"] else None,
                   bool(p["archived"]))


class TableCatalog:
    def __init__(self, blobs: BlobStore) -> None:
        self.blobs = blobs
        self._entries: dict[str, TableEntry] = {}
        self._counter = 0
        self._decoded: dict[str, list[Record]] = {}

    # -- lookup ------------------------------------------------------------

    def get(self, table_id: str) -> TableEntry:
        try:
            return self._entries[table_id]
        except KeyError:
            raise UnknownTable(f"no table {table_id!r}") from None

    def resolve(self, ref: str) -> TableEntry:
        """Accept a table id or a live display name."""
        if ref in self._entries:
            return self._entries[ref]
        for entry in self._entries.values():
            if entry.name == ref and not entry.archived:
                return entry
        raise UnknownTable(f"no table with id or live name {ref!r}")

    def by_name(self, name: str) -> TableEntry | None:
        for entry in self._entries.values():
            if entry.name == name and not entry.archived:
                return entry
        return None

    def list_tables(self, include_archived: bool = False) -> list[TableEntry]:
        entries = sorted(self._entries.values(), key=lambda e: e.table_id)
        if include_archived:
            return entries
        return [e for e in entries if not e.archived]

    # -- creation ----------------------------------------------------------

    def _next_id(self) -> str:
        self._counter += 1
        return f"t{self._counter:04d}"

    def _claim_name(self, name: str) -> None:
        if not name:
            raise NameCollision("display name must be non-empty")
        if self.by_name(name) is not None:
            raise NameCollision(f"display name {name!r} is already in use")

    def register_leaf_table(self, name: str, schema: Schema,
                            records: Iterable[Record],
                            provenance: Sequence[BlobRef] = ()) -> TableEntry:
        self._claim_name(name)
        conformed = conform_records(schema, records, where=f"table {name!r}: ")
        data = to_canonical_bytes(schema, conformed)
        data_ref = self.blobs.put(data, hint="table/canonical")
        node = LineageNode("leaf", {"name": name}, (),
                          (data_ref, *provenance))
        entry = TableEntry(self._next_id(), name, KIND_LEAF, schema,
                           len(conformed), node, data_ref)
        self._entries[entry.table_id] = entry
        self._decoded[entry.table_id] = sorted(conformed, key=lambda r: r.row_id)
        return entry

    def register_leaf_from_manifest(self, manifest: dict) -> TableEntry:
        if manifest.get("format") != MANIFEST_FORMAT:
            raise UnknownTable(f"unsupported manifest format {manifest.get('format')!r}")
        name = manifest["name"]
        self._claim_name(name)
        schema = Schema.from_payload(manifest["schema"])
        data_ref = BlobRef.from_payload(manifest["data"])
        provenance = tuple(BlobRef.from_payload(r) for r in manifest.get("sources", []))
        node = LineageNode("leaf", {"name": name}, (), (data_ref, *provenance))
        entry = TableEntry(self._next_id(), name, KIND_LEAF, schema,
                           int(manifest["rows"]), node, data_ref)
        self._entries[entry.table_id] = entry
        return entry

    def derive(self, operator: str, params: dict, deps: Sequence[str],
               name: str, kind: str = KIND_DERIVED) -> TableEntry:
        self._claim_name(name)
        dep_entries = [self.get(d) for d in deps]
        payloads = [(e.schema, self.records(e.table_id)) for e in dep_entries]
        out_schema, out_records = algebra.apply(operator, params, payloads)
        data = to_canonical_bytes(out_schema, out_records)
        data_ref = self.blobs.put(data, hint="table/canonical")
        node = LineageNode(operator, params, tuple(deps), ())
        entry = TableEntry(self._next_id(), name, kind, out_schema,
                           len(out_records), node, data_ref)
        self._entries[entry.table_id] = entry
        self._decoded[entry.table_id] = sorted(out_records, key=lambda r: r.row_id)
        return entry

    def register_results_table(self, name: str, schema: Schema,
                               records: Iterable[Record],
                               deps: Sequence[str]) -> TableEntry:
        """Results tables come out of the subtask fabric: leaf-like data,
        but their lineage remembers which table the batch ranged over."""
        self._claim_name(name)
        for d in deps:
            self.get(d)
        conformed = conform_records(schema, records, where=f"table {name!r}: ")
        data = to_canonical_bytes(schema, conformed)
        data_ref = self.blobs.put(data, hint="table/canonical")
        node = LineageNode("results", {"name": name}, tuple(deps), (data_ref,))
        entry = TableEntry(self._next_id(), name, KIND_RESULTS, schema,
                           len(conformed), node, data_ref)
        self._entries[entry.table_id] = entry
        self._decoded[entry.table_id] = sorted(conformed, key=lambda r: r.row_id)
        return entry

    # -- data access -------------------------------------------------------

    def records(self, table_id: str) -> list[Record]:
        """Decoded records in canonical (row-id) order.

        Row-id order is the one ordering that survives serialization,
        replay, and snapshot restore, so it is the table order everywhere:
        previews page through it and grouping takes "first" against it.
        If the cached materialization was evicted, this recovers it via
        replay and re-caches.
        """
        entry = self.get(table_id)
        if table_id in self._decoded:
            return self._decoded[table_id]
        if entry.data_ref is not None:
            try:
                raw = self.blobs.get(entry.data_ref)
            except BlobNotFound:
                raw = None
            if raw is not None:
                _, records = from_canonical_bytes(raw)
                self._decoded[table_id] = records
                return records
        records = self.replay(table_id)
        data_ref = self.blobs.put(to_canonical_bytes(entry.schema, records),
                                  hint="table/canonical")
        entry.data_ref = data_ref
        self._decoded[table_id] = records
        return records

    def canonical_bytes(self, table_id: str) -> bytes:
        entry = self.get(table_id)
        return to_canonical_bytes(entry.schema, self.records(table_id))

    def evict_materialization(self, table_id: str) -> None:
        entry = self.get(table_id)
        entry.data_ref = None
        self._decoded.pop(table_id, None)

    def replay(self, table_id: str) -> list[Record]:
        """Recompute a table from its lineage, bottoming out at leaf blobs."""
        entry = self.get(table_id)
        node = entry.lineage
        if node.operator in ("leaf", "results"):
            ref = node.source_refs[0]
            try:
                raw = self.blobs.get(ref)
            except BlobNotFound:
                raise UnrecoverableLineage(
                    f"table {table_id} ({entry.name!r}): leaf blob {ref.id} "
                    f"is gone; lineage cannot be replayed") from None
            _, records = from_canonical_bytes(raw)
            return records
        payloads = [(self.get(d).schema, self.records(d)) for d in node.deps]
        _, records = algebra.apply(node.operator, node.params, payloads)
        return sorted(records, key=lambda r: r.row_id)

    def digest(self, table_id: str, byte_budget: int) -> TableDigest:
        entry = self.get(table_id)
        return build_digest(entry.table_id, entry.name, entry.kind, entry.schema,
                            self.records(table_id), byte_budget)

    # -- namespace ---------------------------------------------------------

    def rename(self, table_id: str, new_name: str) -> TableEntry:
        entry = self.get(table_id)
        if entry.name != new_name:
            self._claim_name(new_name)
            entry.name = new_name
        return entry

    def archive(self, table_id: str) -> TableEntry:
        entry = self.get(table_id)
        entry.archived = True
        return entry

    def unarchive(self, table_id: str, new_name: str | None = None) -> TableEntry:
        entry = self.get(table_id)
        if not entry.archived:
            return entry
        wanted = new_name or entry.name
        if self.by_name(wanted) is not None:
            raise NameCollision(
                f"cannot unarchive {table_id}: name {wanted!r} is taken; "
                f"pass a new display name")
        entry.name = wanted
        entry.archived = False
        return entry

    # -- persistence -------------------------------------------------------

    def snapshot(self) -> dict:
        return {"format": SNAPSHOT_FORMAT, "counter": self._counter,
                "entries": [self._entries[k].to_payload()
                            for k in sorted(self._entries)]}

    def snapshot_to_blob(self) -> BlobRef:
        data = json.dumps(self.snapshot(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        return self.blobs.put(data, hint="catalog/snapshot")

    @classmethod
    def restore(cls, blobs: BlobStore, snapshot: dict) -> "TableCatalog":
        if snapshot.get("format") != SNAPSHOT_FORMAT:
            raise UnknownTable(f"unsupported snapshot format {snapshot.get('format')!r}")
        cat = cls(blobs)
        cat._counter = int(snapshot["counter"])
        for payload in snapshot["entries"]:
            cat._insert_entry(TableEntry.from_payload(payload))
        return cat

    @classmethod
    def restore_from_blob(cls, blobs: BlobStore, ref: BlobRef) -> "TableCatalog":
        return cls.restore(blobs, json.loads(blobs.get(ref)))

    def _insert_entry(self, entry: TableEntry) -> None:
        """Guarded insertion: dependencies must already exist, which keeps
        the lineage graph acyclic no matter what a snapshot claims."""
        if entry.table_id in self._entries:
            raise LineageCycle(f"duplicate table id {entry.table_id}")
        for dep in entry.lineage.deps:
            if dep == entry.table_id:
                raise LineageCycle(f"table {entry.table_id} depends on itself")
            if dep not in self._entries:
                raise LineageCycle(
                    f"table {entry.table_id} depends on {dep}, which does not "
                    f"exist yet; lineage edges must point backwards")
        self._entries[entry.table_id] = entry
