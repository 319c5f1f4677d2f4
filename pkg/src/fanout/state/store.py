"""Durable task state on embedded sqlite.

One database file per deployment (WAL journal, so ``.db-wal`` and
``.db-shm`` sidecars appear next to it while a writer is live).  All
control state lives here: tasks, manager checkpoints, subtask specs and
their run attempts, artifacts, and an append-only event log.

Durability target is process-crash safety: WAL with synchronous=NORMAL
means every acknowledged write survives a killed process (the OS holds
the pages), which is what the recovery tests exercise.  A single
connection guarded by a lock serializes writers; sqlite itself makes
each transaction atomic.

Event sequence numbers are dense per task (1, 2, 3, ...) because the
next number is computed inside the same transaction as the insert.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from ..blobs import BlobRef
from ..errors import (DuplicateCheckpoint, IntegrityViolation,
                      InvalidTransition, NoCheckpoint, UnknownEntity)

RUNNING = "running"
FINALIZED = "finalized"
FAILED = "failed"

# per-attempt outcomes
SUCCESS = "success"
TRANSIENT_FAILURE = "transient-failure"
LOGICAL_FAILURE = "logical-failure"
TIMEOUT = "timeout"
ATTEMPT_OUTCOMES = (SUCCESS, TRANSIENT_FAILURE, LOGICAL_FAILURE, TIMEOUT)

# final subtask statuses: success, or logical-failure once retries are spent
FINAL_STATUSES = (SUCCESS, LOGICAL_FAILURE)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS tasks (
    task_id     TEXT PRIMARY KEY,
    query       TEXT NOT NULL,
    input_refs  TEXT NOT NULL,
    status      TEXT NOT NULL,
    created_at  REAL NOT NULL,
    finished_at REAL,
    outcome     TEXT
);
CREATE TABLE IF NOT EXISTS checkpoints (
    task_id    TEXT NOT NULL REFERENCES tasks(task_id),
    round      INTEGER NOT NULL,
    payload    TEXT NOT NULL,
    created_at REAL NOT NULL,
    PRIMARY KEY (task_id, round)
);
CREATE TABLE IF NOT EXISTS subtask_specs (
    task_id  TEXT NOT NULL REFERENCES tasks(task_id),
    spec_id  TEXT NOT NULL,
    batch_id TEXT NOT NULL,
    payload  TEXT NOT NULL,
    PRIMARY KEY (task_id, spec_id)
);
CREATE TABLE IF NOT EXISTS subtask_runs (
    task_id  TEXT NOT NULL,
    spec_id  TEXT NOT NULL,
    status   TEXT NOT NULL,
    attempts INTEGER NOT NULL,
    output   TEXT,
    error    TEXT,
    metrics  TEXT NOT NULL,
    PRIMARY KEY (task_id, spec_id),
    FOREIGN KEY (task_id, spec_id) REFERENCES subtask_specs(task_id, spec_id)
);
CREATE TABLE IF NOT EXISTS attempts (
    task_id     TEXT NOT NULL,
    spec_id     TEXT NOT NULL,
    attempt     INTEGER NOT NULL,
    outcome     TEXT NOT NULL,
    started_at  REAL NOT NULL,
    finished_at REAL NOT NULL,
    error       TEXT,
    PRIMARY KEY (task_id, spec_id, attempt),
    FOREIGN KEY (task_id, spec_id) REFERENCES subtask_specs(task_id, spec_id)
);
CREATE TABLE IF NOT EXISTS artifacts (
    task_id     TEXT NOT NULL,
    artifact_id TEXT NOT NULL,
    subtask_id  TEXT NOT NULL,
    blob        TEXT NOT NULL,
    name        TEXT NOT NULL,
    media_hint  TEXT,
    excerpt     TEXT NOT NULL,
    created_at  REAL NOT NULL,
    PRIMARY KEY (task_id, artifact_id),
    FOREIGN KEY (task_id, subtask_id) REFERENCES subtask_specs(task_id, spec_id)
);
CREATE TABLE IF NOT EXISTS events (
    task_id    TEXT NOT NULL REFERENCES tasks(task_id),
    seq        INTEGER NOT NULL,
    kind       TEXT NOT NULL,
    payload    TEXT NOT NULL,
    created_at REAL NOT NULL,
    PRIMARY KEY (task_id, seq)
);
"""


def _dumps(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, allow_nan=False)


@dataclass
class TaskRecord:
    task_id: str
    query: str
    input_refs: list[BlobRef]
    status: str
    created_at: float
    finished_at: float | None
    outcome: Any


@dataclass
class Checkpoint:
    task_id: str
    round: int
    payload: dict
    created_at: float


@dataclass
class AttemptRecord:
    attempt: int
    outcome: str
    started_at: float
    finished_at: float
    error: str | None


@dataclass
class SubtaskRun:
    task_id: str
    spec_id: str
    status: str
    attempts: int
    output: Any
    error: str | None
    metrics: dict


@dataclass
class ArtifactRecord:
    task_id: str
    artifact_id: str
    subtask_id: str
    ref: BlobRef
    name: str
    media_hint: str | None
    excerpt: str
    created_at: float


@dataclass
class EventRecord:
    task_id: str
    seq: int
    kind: str
    payload: dict
    created_at: float


class TaskStateStore:
    """All reads and writes go through one locked connection.

    ``blobs`` is optional; when present, artifact writes verify that the
    referenced blob actually exists.
    """

    def __init__(self, path: str | Path, blobs=None) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._blobs = blobs
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=NORMAL")
        self._conn.execute("PRAGMA foreign_keys=ON")
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # --- tasks ------------------------------------------------------------

    def create_task(self, task_id: str, query: str,
                    input_refs: Sequence[BlobRef] = ()) -> TaskRecord:
        refs = _dumps([r.to_payload() for r in input_refs])
        with self._lock:
            try:
                with self._conn:
                    self._conn.execute(
                        "INSERT INTO tasks VALUES (?,?,?,?,?,NULL,NULL)",
                        (task_id, query, refs, RUNNING, time.time()))
            except sqlite3.IntegrityError:
                raise InvalidTransition(f"task {task_id!r} already exists") from None
        return self.get_task(task_id)

    def _task_row(self, task_id: str):
        row = self._conn.execute(
            "SELECT task_id, query, input_refs, status, created_at, "
            "finished_at, outcome FROM tasks WHERE task_id=?",
            (task_id,)).fetchone()
        if row is None:
            raise UnknownEntity(f"no task {task_id!r}")
        return row

    def get_task(self, task_id: str) -> TaskRecord:
        with self._lock:
            row = self._task_row(task_id)
        return TaskRecord(row[0], row[1],
                          [BlobRef.from_payload(p) for p in json.loads(row[2])],
                          row[3], row[4], row[5],
                          json.loads(row[6]) if row[6] else None)

    def _finish_task(self, task_id: str, status: str, outcome: Any) -> None:
        with self._lock:
            current = self._task_row(task_id)[3]
            if current != RUNNING:
                raise InvalidTransition(
                    f"task {task_id!r} is {current}; only a running task can "
                    f"become {status}")
            with self._conn:
                self._conn.execute(
                    "UPDATE tasks SET status=?, finished_at=?, outcome=? "
                    "WHERE task_id=?",
                    (status, time.time(), _dumps(outcome), task_id))

    def finalize_task(self, task_id: str, outcome: Any = None) -> None:
        self._finish_task(task_id, FINALIZED, outcome)

    def fail_task(self, task_id: str, reason: Any = None) -> None:
        self._finish_task(task_id, FAILED, reason)

    def list_tasks(self, page: int = 1, page_size: int = 50) -> list[TaskRecord]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT task_id FROM tasks ORDER BY task_id LIMIT ? OFFSET ?",
                (page_size, (page - 1) * page_size)).fetchall()
        return [self.get_task(r[0]) for r in rows]

    # --- checkpoints ------------------------------------------------------

    def write_checkpoint(self, task_id: str, round_no: int, payload: dict) -> None:
        with self._lock:
            self._task_row(task_id)
            top = self._conn.execute(
                "SELECT MAX(round) FROM checkpoints WHERE task_id=?",
                (task_id,)).fetchone()[0]
            if top is not None and round_no == top:
                raise DuplicateCheckpoint(
                    f"checkpoint for round {round_no} of task {task_id!r} "
                    f"already written")
            if top is not None and round_no < top:
                raise InvalidTransition(
                    f"checkpoint rounds are strictly increasing; have {top}, "
                    f"got {round_no}")
            with self._conn:
                self._conn.execute(
                    "INSERT INTO checkpoints VALUES (?,?,?,?)",
                    (task_id, round_no, _dumps(payload), time.time()))

    def recover_latest_checkpoint(self, task_id: str) -> Checkpoint:
        with self._lock:
            self._task_row(task_id)
            row = self._conn.execute(
                "SELECT round, payload, created_at FROM checkpoints "
                "WHERE task_id=? ORDER BY round DESC LIMIT 1",
                (task_id,)).fetchone()
        if row is None:
            raise NoCheckpoint(f"task {task_id!r} has no checkpoint")
        return Checkpoint(task_id, row[0], json.loads(row[1]), row[2])

    def list_checkpoints(self, task_id: str) -> list[Checkpoint]:
        with self._lock:
            self._task_row(task_id)
            rows = self._conn.execute(
                "SELECT round, payload, created_at FROM checkpoints "
                "WHERE task_id=? ORDER BY round", (task_id,)).fetchall()
        return [Checkpoint(task_id, r[0], json.loads(r[1]), r[2]) for r in rows]

    # --- subtask specs and runs -------------------------------------------

    def record_specs(self, task_id: str, batch_id: str,
                     specs: Iterable[tuple[str, dict]]) -> None:
        """One transaction for the whole batch; specs are (id, payload)."""
        with self._lock:
            self._task_row(task_id)
            try:
                with self._conn:
                    self._conn.executemany(
                        "INSERT INTO subtask_specs VALUES (?,?,?,?)",
                        [(task_id, spec_id, batch_id, _dumps(payload))
                         for spec_id, payload in specs])
            except sqlite3.IntegrityError as err:
                raise IntegrityViolation(f"spec insert rejected: {err}") from None

    def get_spec(self, task_id: str, spec_id: str) -> dict:
        with self._lock:
            row = self._conn.execute(
                "SELECT payload FROM subtask_specs WHERE task_id=? AND spec_id=?",
                (task_id, spec_id)).fetchone()
        if row is None:
            raise UnknownEntity(f"no spec {spec_id!r} in task {task_id!r}")
        return json.loads(row[0])

    def list_specs(self, task_id: str, batch_id: str | None = None) -> list[str]:
        with self._lock:
            if batch_id is None:
                rows = self._conn.execute(
                    "SELECT spec_id FROM subtask_specs WHERE task_id=? "
                    "ORDER BY spec_id", (task_id,)).fetchall()
            else:
                rows = self._conn.execute(
                    "SELECT spec_id FROM subtask_specs WHERE task_id=? AND "
                    "batch_id=? ORDER BY spec_id", (task_id, batch_id)).fetchall()
        return [r[0] for r in rows]

    def record_runs(self, task_id: str,
                    runs: Iterable[tuple[str, str, Any, str | None, dict,
                                         list[tuple]]]) -> None:
        """Persist finished runs in one transaction.

        Each run is (spec_id, status, output, error, metrics, attempts)
        with attempts as (attempt#, outcome, started, finished, error).
        """
        run_rows = []
        attempt_rows = []
        for spec_id, status, output, error, metrics, tries in runs:
            if status not in FINAL_STATUSES:
                raise IntegrityViolation(f"final status {status!r} is not one "
                                         f"of {FINAL_STATUSES}")
            succeeded = any(t[1] == SUCCESS for t in tries)
            if (status == SUCCESS) != succeeded:
                raise IntegrityViolation(
                    f"run {spec_id!r}: final status {status!r} contradicts "
                    f"its attempt outcomes")
            for t in tries:
                if t[1] not in ATTEMPT_OUTCOMES:
                    raise IntegrityViolation(f"unknown attempt outcome {t[1]!r}")
            run_rows.append((task_id, spec_id, status, len(tries),
                             _dumps(output) if output is not None else None,
                             error, _dumps(metrics)))
            attempt_rows.extend(
                (task_id, spec_id, t[0], t[1], t[2], t[3], t[4]) for t in tries)
        with self._lock:
            try:
                with self._conn:
                    self._conn.executemany(
                        "INSERT INTO subtask_runs VALUES (?,?,?,?,?,?,?)",
                        run_rows)
                    self._conn.executemany(
                        "INSERT INTO attempts VALUES (?,?,?,?,?,?,?)",
                        attempt_rows)
            except sqlite3.IntegrityError as err:
                raise IntegrityViolation(f"run insert rejected: {err}") from None

    def _run_from_row(self, row) -> SubtaskRun:
        return SubtaskRun(row[0], row[1], row[2], row[3],
                          json.loads(row[4]) if row[4] else None,
                          row[5], json.loads(row[6]))

    def list_subtasks(self, task_id: str, status: str | None = None,
                      page: int = 1, page_size: int = 50) -> dict:
        with self._lock:
            self._task_row(task_id)
            where = "WHERE task_id=?"
            args: list = [task_id]
            if status is not None:
                where += " AND status=?"
                args.append(status)
            total = self._conn.execute(
                f"SELECT COUNT(*) FROM subtask_runs {where}", args).fetchone()[0]
            rows = self._conn.execute(
                f"SELECT task_id, spec_id, status, attempts, output, error, "
                f"metrics FROM subtask_runs {where} ORDER BY spec_id "
                f"LIMIT ? OFFSET ?",
                (*args, page_size, (page - 1) * page_size)).fetchall()
        return {"page": page, "page_size": page_size, "total": total,
                "items": [self._run_from_row(r) for r in rows]}

    def get_subtask_result(self, task_id: str, spec_id: str) -> dict:
        with self._lock:
            row = self._conn.execute(
                "SELECT task_id, spec_id, status, attempts, output, error, "
                "metrics FROM subtask_runs WHERE task_id=? AND spec_id=?",
                (task_id, spec_id)).fetchone()
            if row is None:
                raise UnknownEntity(f"no run for {spec_id!r} in task {task_id!r}")
            tries = self._conn.execute(
                "SELECT attempt, outcome, started_at, finished_at, error "
                "FROM attempts WHERE task_id=? AND spec_id=? ORDER BY attempt",
                (task_id, spec_id)).fetchall()
            art = self._conn.execute(
                "SELECT artifact_id FROM artifacts WHERE task_id=? AND "
                "subtask_id=? ORDER BY artifact_id",
                (task_id, spec_id)).fetchall()
        return {"run": self._run_from_row(row),
                "attempts": [AttemptRecord(*t) for t in tries],
                "artifact_ids": [a[0] for a in art]}

    # --- artifacts --------------------------------------------------------

    def record_artifact(self, task_id: str, artifact_id: str, subtask_id: str,
                        ref: BlobRef, name: str, media_hint: str | None,
                        excerpt: str) -> None:
        if self._blobs is not None and not self._blobs.has(ref):
            raise IntegrityViolation(
                f"artifact {artifact_id!r} references blob {ref.id} which is "
                f"not in the store")
        with self._lock:
            try:
                with self._conn:
                    self._conn.execute(
                        "INSERT INTO artifacts VALUES (?,?,?,?,?,?,?,?)",
                        (task_id, artifact_id, subtask_id,
                         _dumps(ref.to_payload()), name, media_hint, excerpt,
                         time.time()))
            except sqlite3.IntegrityError as err:
                raise IntegrityViolation(f"artifact rejected: {err}") from None

    def _artifact_from_row(self, row) -> ArtifactRecord:
        return ArtifactRecord(row[0], row[1], row[2],
                              BlobRef.from_payload(json.loads(row[3])),
                              row[4], row[5], row[6], row[7])

    def get_artifact(self, task_id: str, artifact_id: str) -> ArtifactRecord:
        with self._lock:
            row = self._conn.execute(
                "SELECT task_id, artifact_id, subtask_id, blob, name, "
                "media_hint, excerpt, created_at FROM artifacts "
                "WHERE task_id=? AND artifact_id=?",
                (task_id, artifact_id)).fetchone()
        if row is None:
            raise UnknownEntity(f"no artifact {artifact_id!r} in task {task_id!r}")
        return self._artifact_from_row(row)

    def list_artifacts(self, task_id: str, page: int = 1,
                       page_size: int = 50) -> dict:
        with self._lock:
            self._task_row(task_id)
            total = self._conn.execute(
                "SELECT COUNT(*) FROM artifacts WHERE task_id=?",
                (task_id,)).fetchone()[0]
            rows = self._conn.execute(
                "SELECT task_id, artifact_id, subtask_id, blob, name, "
                "media_hint, excerpt, created_at FROM artifacts WHERE task_id=? "
                "ORDER BY artifact_id LIMIT ? OFFSET ?",
                (task_id, page_size, (page - 1) * page_size)).fetchall()
        return {"page": page, "page_size": page_size, "total": total,
                "items": [self._artifact_from_row(r) for r in rows]}

    # --- events -----------------------------------------------------------

    def append_event(self, task_id: str, kind: str, payload: dict) -> int:
        with self._lock:
            self._task_row(task_id)
            with self._conn:
                seq = self._conn.execute(
                    "SELECT COALESCE(MAX(seq), 0) + 1 FROM events "
                    "WHERE task_id=?", (task_id,)).fetchone()[0]
                self._conn.execute(
                    "INSERT INTO events VALUES (?,?,?,?,?)",
                    (task_id, seq, kind, _dumps(payload), time.time()))
        return seq

    def read_events(self, task_id: str, after_seq: int = 0,
                    limit: int = 1000) -> list[EventRecord]:
        with self._lock:
            self._task_row(task_id)
            rows = self._conn.execute(
                "SELECT task_id, seq, kind, payload, created_at FROM events "
                "WHERE task_id=? AND seq>? ORDER BY seq LIMIT ?",
                (task_id, after_seq, limit)).fetchall()
        return [EventRecord(r[0], r[1], r[2], json.loads(r[3]), r[4])
                for r in rows]

    def export_events(self, task_id: str, path: str | Path) -> int:
        """Event log as one JSON object per line, in append order."""
        events = []
        after = 0
        while True:
            chunk = self.read_events(task_id, after_seq=after)
            if not chunk:
                break
            events.extend(chunk)
            after = chunk[-1].seq
        with open(path, "w", encoding="utf-8") as fh:
            for ev in events:
                fh.write(_dumps({"seq": ev.seq, "kind": ev.kind,
                                 "payload": ev.payload,
                                 "created_at": ev.created_at}) + "\n")
        return len(events)
