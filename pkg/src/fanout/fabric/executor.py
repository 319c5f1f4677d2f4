"""Staging area and batch executor.

The manager stages templates, then a dispatch expands them into specs
and runs the whole batch: bounded concurrency (per-node slots for
full-agent work, one higher cap for the llm-only path), per-attempt
timeouts, and automatic retries for transient failures only.  Successes
land in a results table whose rows join back to their source rows; a
subtask that exhausts its attempts surfaces as a logical failure in the
BatchResult — batch dispatch itself never raises for per-spec failures.

Specs share no mutable state, so executing a batch in any order or
interleaving produces the same BatchResult contents; only timing
metrics vary.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from ..blobs import BlobRef
from ..errors import AttemptTimeout, StagingError
from ..state import (LOGICAL_FAILURE, SUCCESS, TIMEOUT, TRANSIENT_FAILURE)
from ..tables.algebra import SOURCE_ROW_COL, SOURCE_TABLE_COL, SUBTASK_COL
from ..tables.schema import Record, Schema
from .template import (FULL_AGENT, LLM_ONLY, SubtaskSpec, SubtaskTemplate,
                       expand, validate_template)

MAX_ATTEMPTS = 3
LLM_ONLY_CAP = 256
TRANSIENT = "transient"
LOGICAL = "logical"


def _json_safe(output: dict | None) -> dict | None:
    """Run rows persist as JSON; blob pointers flatten to their payload."""
    if output is None:
        return None
    return {k: v.to_payload() if isinstance(v, BlobRef) else v
            for k, v in output.items()}


def classify_error(err: BaseException) -> str:
    """Transient errors have earned a retry; everything else is logical.

    Unrecognized exceptions classify as logical: a bug should surface as
    a failure, not burn retries.
    """
    return TRANSIENT if getattr(err, "transient", False) else LOGICAL


@dataclass(frozen=True)
class StagedEntry:
    staged_id: str
    template: SubtaskTemplate
    source_table: str | None

    def to_payload(self) -> dict:
        return {"staged_id": self.staged_id,
                "template": self.template.to_payload(),
                "source_table": self.source_table}

    @classmethod
    def from_payload(cls, payload: dict) -> "StagedEntry":
        return cls(payload["staged_id"],
                   SubtaskTemplate.from_payload(payload["template"]),
                   payload["source_table"])


@dataclass
class BatchResult:
    batch_id: str
    statuses: dict[str, str]
    failures: list[dict] = field(default_factory=list)
    results_table: str | None = None
    row_count: int = 0
    metrics: dict = field(default_factory=dict)

    def summary(self) -> str:
        done = sum(1 for s in self.statuses.values() if s == SUCCESS)
        failed = len(self.statuses) - done
        lines = [f"batch {self.batch_id}: {done} succeeded, {failed} failed "
                 f"of {len(self.statuses)} subtasks"]
        if self.results_table:
            lines.append(f"results table {self.results_table} "
                         f"({self.row_count} rows)")
        for failure in self.failures[:5]:
            lines.append(f"  failed {failure['spec_id']}: {failure['error']}")
        if len(self.failures) > 5:
            lines.append(f"  ... and {len(self.failures) - 5} more failures")
        return "\n".join(lines)


class SubtaskFabric:
    """Owns staging and dispatch for one task runtime.

    ``workers`` is anything with ``run(spec, attempt) -> WorkerResult``;
    the fabric adds timeouts, retries, and slot limits around it.
    """

    def __init__(self, catalog, blobs, presets, state, workers,
                 node_slots: dict[str, int] | None = None,
                 llm_only_cap: int = LLM_ONLY_CAP,
                 max_attempts: int = MAX_ATTEMPTS) -> None:
        self.catalog = catalog
        self.blobs = blobs
        self.presets = presets
        self.state = state
        self.workers = workers
        self.node_slots = dict(node_slots or {"local": 4})
        if any(count < 1 for count in self.node_slots.values()):
            raise StagingError("every node needs at least one slot")
        self.llm_only_cap = llm_only_cap
        self.max_attempts = max_attempts
        self._staged: list[StagedEntry] = []
        self._staged_counter = 0
        self._nodes = sorted(self.node_slots)
        self._node_sems = {node: threading.BoundedSemaphore(count)
                           for node, count in self.node_slots.items()}
        self._llm_sem = threading.BoundedSemaphore(llm_only_cap)

    # --- staging ----------------------------------------------------------

    def _next_staged_id(self) -> str:
        self._staged_counter += 1
        return f"st{self._staged_counter:03d}"

    def stage_single(self, template: SubtaskTemplate) -> StagedEntry:
        if template.data_source is not None:
            raise StagingError("stage_single takes a template without a data "
                               "source; use stage_dataset")
        self.presets.get(template.preset)
        validate_template(template, None)
        entry = StagedEntry(self._next_staged_id(), template, None)
        self._staged.append(entry)
        return entry

    def stage_dataset(self, template: SubtaskTemplate,
                      table_ref: str) -> StagedEntry:
        table = self.catalog.resolve(table_ref)
        if table.archived:
            raise StagingError(f"table {table.table_id} is archived")
        if template.data_source is not None and \
                template.data_source not in (table.table_id, table.name):
            raise StagingError(f"template names data source "
                               f"{template.data_source!r} but was staged "
                               f"against {table_ref!r}")
        self.presets.get(template.preset)
        validate_template(template, table.schema)
        entry = StagedEntry(self._next_staged_id(), template, table.table_id)
        self._staged.append(entry)
        return entry

    def list_staged(self) -> list[StagedEntry]:
        return list(self._staged)

    def remove_staged(self, staged_id: str) -> None:
        for i, entry in enumerate(self._staged):
            if entry.staged_id == staged_id:
                del self._staged[i]
                return
        raise StagingError(f"nothing staged under {staged_id!r}")

    def clear_staged(self) -> None:
        self._staged.clear()

    def snapshot_staging(self) -> list[dict]:
        return [entry.to_payload() for entry in self._staged]

    def restore_staging(self, payloads: list[dict]) -> None:
        self._staged = [StagedEntry.from_payload(p) for p in payloads]
        top = max((int(e.staged_id[2:]) for e in self._staged), default=0)
        self._staged_counter = max(self._staged_counter, top)

    # --- expansion --------------------------------------------------------

    def _expand_all(self, task_id: str, batch_id: str,
                    entries: list[StagedEntry]) -> list[SubtaskSpec]:
        specs: list[SubtaskSpec] = []
        index = 0
        for entry in entries:
            preset = self.presets.get(entry.template.preset)
            if entry.source_table is None:
                index += 1
                specs.append(expand(entry.template, preset, task_id,
                                    f"{batch_id}-s{index:05d}", self.blobs))
                continue
            schema = self.catalog.get(entry.source_table).schema
            validate_template(entry.template, schema)
            for record in self.catalog.records(entry.source_table):
                index += 1
                specs.append(expand(entry.template, preset, task_id,
                                    f"{batch_id}-s{index:05d}", self.blobs,
                                    record=record,
                                    source_table=entry.source_table))
        return specs

    @staticmethod
    def _homogeneous_schema(entries: list[StagedEntry]) -> Schema:
        schemas = [entry.template.output_schema for entry in entries]
        first = schemas[0]
        shape = {(f.name, f.type, f.nullable) for f in first.fields}
        for other in schemas[1:]:
            if {(f.name, f.type, f.nullable) for f in other.fields} != shape:
                raise StagingError(
                    "staged templates disagree on the output schema; a batch "
                    "must produce one results table")
        return first

    # --- execution --------------------------------------------------------

    def _attempt(self, spec: SubtaskSpec, attempt: int):
        """One attempt under the spec's timeout.

        The worker runs on a helper thread so a hung attempt can be
        abandoned; the thread is daemonized and its late result dropped.
        """
        if not spec.timeout_seconds or spec.timeout_seconds <= 0:
            return self.workers.run(spec, attempt)
        box: dict = {}

        def target() -> None:
            try:
                box["result"] = self.workers.run(spec, attempt)
            except BaseException as err:
                box["error"] = err

        thread = threading.Thread(target=target, daemon=True,
                                  name=f"attempt-{spec.spec_id}")
        thread.start()
        thread.join(spec.timeout_seconds)
        if thread.is_alive():
            raise AttemptTimeout(f"{spec.spec_id} attempt {attempt} exceeded "
                                 f"{spec.timeout_seconds}s")
        if "error" in box:
            raise box["error"]
        return box["result"]

    def _run_spec(self, spec: SubtaskSpec, node: str):
        sem = self._llm_sem if spec.mode == LLM_ONLY else self._node_sems[node]
        tries: list[tuple] = []
        result = None
        error: BaseException | None = None
        with sem:
            for attempt in range(1, self.max_attempts + 1):
                started = time.time()
                try:
                    result = self._attempt(spec, attempt)
                    tries.append((attempt, SUCCESS, started, time.time(), None))
                    break
                except BaseException as err:
                    outcome = TIMEOUT if isinstance(err, AttemptTimeout) else (
                        TRANSIENT_FAILURE if classify_error(err) == TRANSIENT
                        else LOGICAL_FAILURE)
                    tries.append((attempt, outcome, started, time.time(),
                                  f"{type(err).__name__}: {err}"))
                    error = err
                    if classify_error(err) == LOGICAL:
                        break
        if result is not None:
            status = SUCCESS
            output = result.output
            metrics = dict(result.metrics)
            error_text = None
            artifacts = list(result.artifacts)
        else:
            status = LOGICAL_FAILURE
            output = None
            metrics = {}
            error_text = f"{type(error).__name__}: {error}"
            artifacts = []
        metrics["node"] = node
        return (spec.spec_id, status, output, error_text, metrics, tries,
                artifacts)

    def _execute(self, specs: list[SubtaskSpec]) -> list[tuple]:
        nodes = self._nodes
        assigned = {spec.spec_id: nodes[i % len(nodes)]
                    for i, spec in enumerate(specs)}
        runs: dict[str, tuple] = {}
        runs_lock = threading.Lock()
        cursor = iter(specs)
        cursor_lock = threading.Lock()

        def drain() -> None:
            while True:
                with cursor_lock:
                    spec = next(cursor, None)
                if spec is None:
                    return
                run = self._run_spec(spec, assigned[spec.spec_id])
                with runs_lock:
                    runs[spec.spec_id] = run

        total_slots = sum(self.node_slots.values())
        if all(spec.mode == LLM_ONLY for spec in specs):
            ceiling = self.llm_only_cap
        elif all(spec.mode == FULL_AGENT for spec in specs):
            ceiling = total_slots
        else:
            ceiling = max(self.llm_only_cap, total_slots)
        pool = [threading.Thread(target=drain, name=f"exec-{i}")
                for i in range(min(len(specs), ceiling))]
        for thread in pool:
            thread.start()
        for thread in pool:
            thread.join()
        return [runs[spec.spec_id] for spec in specs]

    # --- dispatch ---------------------------------------------------------

    def dispatch(self, task_id: str, batch_id: str,
                 results_name: str | None = None) -> BatchResult:
        entries = list(self._staged)
        if not entries:
            return BatchResult(batch_id, {}, metrics={"specs": 0, "wall_ms": 0})
        output_schema = self._homogeneous_schema(entries)
        specs = self._expand_all(task_id, batch_id, entries)
        self.state.record_specs(task_id, batch_id,
                                [(s.spec_id, s.to_payload()) for s in specs])
        self.state.append_event(task_id, "batch_dispatched",
                                {"batch_id": batch_id, "specs": len(specs)})
        started = time.time()
        runs = self._execute(specs)
        wall_ms = int((time.time() - started) * 1000)
        self.state.record_runs(
            task_id,
            [(r[0], r[1], _json_safe(r[2]), r[3], r[4], r[5]) for r in runs])
        for spec_id, _, _, _, _, _, artifacts in runs:
            for i, art in enumerate(artifacts, start=1):
                self.state.record_artifact(
                    task_id, f"{spec_id}-art{i}", spec_id, art["ref"],
                    art["name"], art.get("media_hint"), art.get("excerpt"))

        statuses = {run[0]: run[1] for run in runs}
        failures = [{"spec_id": run[0], "error": run[3]}
                    for run in runs if run[1] != SUCCESS]
        by_id = {spec.spec_id: spec for spec in specs}
        records = []
        for spec_id, status, output, _, _, _, _ in runs:
            if status != SUCCESS:
                continue
            spec = by_id[spec_id]
            values = dict(output)
            values[SUBTASK_COL] = spec_id
            values[SOURCE_TABLE_COL] = spec.source_table
            values[SOURCE_ROW_COL] = spec.source_row
            records.append(Record(spec_id, values))
        schema = Schema.of(
            (SUBTASK_COL, "text"), (SOURCE_TABLE_COL, "text", True),
            (SOURCE_ROW_COL, "text", True),
            *((f.name, f.type, f.nullable) for f in output_schema.fields))
        deps = []
        for entry in entries:
            if entry.source_table and entry.source_table not in deps:
                deps.append(entry.source_table)
        table = self.catalog.register_results_table(
            results_name or f"{batch_id}-results", schema, records, deps)
        self.clear_staged()
        attempts_total = sum(len(run[5]) for run in runs)
        self.state.append_event(task_id, "batch_finished",
                                {"batch_id": batch_id,
                                 "succeeded": len(records),
                                 "failed": len(failures),
                                 "results_table": table.table_id})
        return BatchResult(batch_id, statuses, failures, table.table_id,
                           len(records),
                           {"specs": len(specs), "wall_ms": wall_ms,
                            "attempts": attempts_total})
