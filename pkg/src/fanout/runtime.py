"""Composition root: build every subsystem from a config, drive tasks.

The runtime owns the durable stores and the model gateway.  Each task
gets its own catalog and fabric: leaf tables load from ingested
manifests on submit, and on resume the whole working set rebuilds from
the latest checkpoint, so two processes never share in-memory state.
"""

from __future__ import annotations

import json
from pathlib import Path

from .blobs import BlobProxy, BlobRef, BlobStore
from .config import RuntimeConfig
from .errors import ConfigError, TaskFailed
from .fabric import SubtaskFabric
from .gateway import Gateway, ScriptedBackend, UsageLedger
from .manager import TaskManager, ToolSuite, restore_suite
from .registry import CapabilityRegistry, PresetStore
from .state import TaskStateStore
from .tables.analytics import Analytics
from .tables.catalog import MANIFEST_FORMAT, TableCatalog
from .tables.ingest import read_delimited, read_jsonl
from .tables.schema import Schema
from .tables.serialize import to_canonical_bytes


class Runtime:
    def __init__(self, config: RuntimeConfig) -> None:
        self.config = config
        Path(config.root).mkdir(parents=True, exist_ok=True)
        self.blobs = BlobStore(config.blobs_dir)
        self.state = TaskStateStore(config.state_path, blobs=self.blobs)
        self.registry = (CapabilityRegistry.from_seed_file(
            config.capability_seed) if config.capability_seed
            else CapabilityRegistry())
        self.presets = PresetStore(self.registry)
        self.ledger = UsageLedger(config.rates)
        self.gateway = Gateway(self._backend(), self.ledger)
        proxy = BlobProxy(self.blobs)
        from .worker import FullAgentWorker, LlmWorker, WorkerRouter
        self.workers = WorkerRouter(
            llm_worker=LlmWorker(self.gateway, proxy),
            full_agent_worker=FullAgentWorker(
                self.gateway, proxy, self.registry,
                config.workspaces_dir))

    def _backend(self):
        if self.config.script_path:
            return ScriptedBackend.from_fixture_file(self.config.script_path)
        if self.config.provider_profile:
            raise ConfigError(
                f"provider profile {self.config.provider_profile!r} names "
                f"a remote model service; this build runs offline, use a "
                f"scripted fixture")
        raise ConfigError("config selects no backend: set script_path")

    def close(self) -> None:
        self.state.close()

    # --- ingestion --------------------------------------------------------

    def ingest(self, path: str | Path, name: str,
               schema: Schema | None = None,
               id_field: str | None = None) -> dict:
        """File -> canonical table blob + manifest blob; returns the
        manifest (with its blob id) for later submits."""
        path = Path(path)
        if path.suffix.lower() == ".csv":
            schema, records = read_delimited(path, schema, id_field)
        else:
            schema, records = read_jsonl(path, schema, id_field)
        data_ref = self.blobs.put(to_canonical_bytes(schema, records),
                                  hint="table/canonical")
        manifest = {"format": MANIFEST_FORMAT, "name": name,
                    "schema": schema.to_payload(), "rows": len(records),
                    "data": data_ref.to_payload(), "sources": []}
        manifest_ref = self.blobs.put(
            json.dumps(manifest, sort_keys=True).encode("utf-8"),
            hint="table/manifest")
        return {"manifest_id": manifest_ref.id, "name": name,
                "rows": len(records),
                "columns": list(schema.names())}

    # --- task driving -----------------------------------------------------

    def _fabric(self, catalog: TableCatalog) -> SubtaskFabric:
        return SubtaskFabric(catalog, self.blobs, self.presets, self.state,
                             self.workers, node_slots=self.config.nodes,
                             llm_only_cap=self.config.llm_slots,
                             max_attempts=self.config.max_attempts)

    def _manager(self, task_id: str, suite: ToolSuite, **kwargs
                 ) -> TaskManager:
        return TaskManager(
            task_id, self.gateway, suite,
            round_budget=self.config.round_budget,
            tool_call_budget=self.config.tool_call_budget,
            context_budget=self.config.context_budget,
            digest_budget=self.config.digest_budget, **kwargs)

    def submit(self, task_id: str, query: str,
               manifest_ids: list[str] = (), round_hook=None) -> dict:
        catalog = TableCatalog(self.blobs)
        input_refs = []
        for manifest_id in manifest_ids:
            manifest = json.loads(self.blobs.get(manifest_id))
            entry = catalog.register_leaf_from_manifest(manifest)
            input_refs.extend(entry.lineage.source_refs)
        self.state.create_task(task_id, query, input_refs)
        suite = ToolSuite(task_id, catalog, Analytics(catalog),
                          self._fabric(catalog), self.state, self.presets)
        manager = self._manager(task_id, suite, round_hook=round_hook)
        return self._finish(task_id, manager)

    def resume(self, task_id: str, round_hook=None) -> dict:
        suite, checkpoint = restore_suite(
            task_id, self.blobs, self.state, self.presets, self.workers,
            fabric_kwargs={"node_slots": self.config.nodes,
                           "llm_only_cap": self.config.llm_slots,
                           "max_attempts": self.config.max_attempts})
        manager = self._manager(
            task_id, suite, round_hook=round_hook,
            start_round=checkpoint.round + 1,
            batch_counter=checkpoint.payload["batch_counter"],
            last_batch=checkpoint.payload["last_batch"])
        return self._finish(task_id, manager)

    def _finish(self, task_id: str, manager: TaskManager) -> dict:
        try:
            final = manager.run()
        except TaskFailed:
            self._report_usage(task_id)
            raise
        self._report_usage(task_id)
        return final

    def _report_usage(self, task_id: str) -> None:
        report = self.ledger.report(task_id, strict=False)
        self.state.append_event(task_id, "usage_reported", report)

    # --- inspection after a run -------------------------------------------

    def catalog_of(self, task_id: str) -> TableCatalog:
        checkpoint = self.state.recover_latest_checkpoint(task_id)
        return TableCatalog.restore_from_blob(
            self.blobs, BlobRef.from_payload(checkpoint.payload["catalog"]))

    def score(self, task_id: str, benchmark_path: str | Path) -> dict:
        from .scoring import load_benchmark, score_structural
        catalog = self.catalog_of(task_id)
        result = score_structural(catalog, load_benchmark(benchmark_path))
        task = self.state.get_task(task_id)
        result["task"] = {"task_id": task_id, "status": task.status}
        if task.finished_at is not None:
            result["wall_clock_seconds"] = round(
                task.finished_at - task.created_at, 3)
        for event in reversed(self.state.read_events(task_id)):
            if event.kind == "usage_reported":
                result["cost"] = event.payload
                break
        return result

    def replay(self, task_id: str, table: str) -> dict:
        catalog = self.catalog_of(task_id)
        entry = catalog.resolve(table)
        records = catalog.replay(entry.table_id)
        data = to_canonical_bytes(entry.schema, records)
        return {"table_id": entry.table_id, "name": entry.name,
                "rows": len(records),
                "canonical_bytes": len(data),
                "content_id": self.blobs.put(data, hint="table/replay").id}
