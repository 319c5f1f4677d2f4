from __future__ import annotations

import os
import signal
import subprocess
import sys
import textwrap
import time

import pytest

from fanout.errors import (DuplicateCheckpoint, IntegrityViolation,
                           InvalidTransition, NoCheckpoint, UnknownEntity)
from fanout.state import (LOGICAL_FAILURE, SUCCESS, TRANSIENT_FAILURE,
                          TaskStateStore)


@pytest.fixture
def store(tmp_path):
    s = TaskStateStore(tmp_path / "state.db")
    yield s
    s.close()


def _make_task(store, task_id="task-1") -> str:
    store.create_task(task_id, "summarize the corpus")
    return task_id


def _make_specs(store, task_id, n=3, batch="b001") -> list[str]:
    ids = [f"{batch}-s{i + 1:05d}" for i in range(n)]
    store.record_specs(task_id, batch, [(sid, {"instruction": sid}) for sid in ids])
    return ids


def _run_row(spec_id, status=SUCCESS, attempts=1):
    tries = [(i + 1, TRANSIENT_FAILURE, 0.0, 0.1, "flaky")
             for i in range(attempts - 1)]
    last_outcome = SUCCESS if status == SUCCESS else LOGICAL_FAILURE
    tries.append((attempts, last_outcome, 0.0, 0.1,
                  None if status == SUCCESS else "gave up"))
    output = {"summary": "ok"} if status == SUCCESS else None
    error = None if status == SUCCESS else "gave up"
    return (spec_id, status, output, error, {"tokens": 10}, tries)


def test_task_lifecycle(store) -> None:
    task_id = _make_task(store)
    rec = store.get_task(task_id)
    assert rec.status == "running"
    store.finalize_task(task_id, {"tables": ["t0001"]})
    rec = store.get_task(task_id)
    assert rec.status == "finalized"
    assert rec.outcome == {"tables": ["t0001"]}
    assert rec.finished_at is not None


def test_finalize_twice_is_invalid(store) -> None:
    task_id = _make_task(store)
    store.finalize_task(task_id)
    with pytest.raises(InvalidTransition):
        store.finalize_task(task_id)
    with pytest.raises(InvalidTransition):
        store.fail_task(task_id)


def test_duplicate_task_rejected(store) -> None:
    _make_task(store)
    with pytest.raises(InvalidTransition):
        store.create_task("task-1", "again")


def test_unknown_task(store) -> None:
    with pytest.raises(UnknownEntity):
        store.get_task("ghost")


def test_checkpoint_rounds_are_unique_and_increasing(store) -> None:
    task_id = _make_task(store)
    store.write_checkpoint(task_id, 1, {"plan": "a"})
    store.write_checkpoint(task_id, 2, {"plan": "b"})
    with pytest.raises(DuplicateCheckpoint):
        store.write_checkpoint(task_id, 2, {"plan": "b2"})
    with pytest.raises(InvalidTransition):
        store.write_checkpoint(task_id, 1, {"plan": "late"})


def test_recover_latest_checkpoint_returns_highest_round(store) -> None:
    task_id = _make_task(store)
    for n in (1, 2, 3):
        store.write_checkpoint(task_id, n, {"round": n})
    cp = store.recover_latest_checkpoint(task_id)
    assert cp.round == 3
    assert cp.payload == {"round": 3}


def test_recover_without_checkpoint_raises(store) -> None:
    task_id = _make_task(store)
    with pytest.raises(NoCheckpoint):
        store.recover_latest_checkpoint(task_id)


def test_status_filter_lists_exactly_the_failures(store) -> None:
    task_id = _make_task(store)
    ids = _make_specs(store, task_id, n=12)
    runs = [_run_row(sid) for sid in ids[:10]]
    runs += [_run_row(sid, status=LOGICAL_FAILURE, attempts=3) for sid in ids[10:]]
    store.record_runs(task_id, runs)
    failed = store.list_subtasks(task_id, status=LOGICAL_FAILURE)
    assert failed["total"] == 2
    assert [r.spec_id for r in failed["items"]] == ids[10:]
    assert all(r.attempts == 3 for r in failed["items"])


def test_subtask_pagination_is_stable(store) -> None:
    task_id = _make_task(store)
    ids = _make_specs(store, task_id, n=7)
    store.record_runs(task_id, [_run_row(sid) for sid in ids])
    page1 = store.list_subtasks(task_id, page=1, page_size=3)
    page2 = store.list_subtasks(task_id, page=2, page_size=3)
    page3 = store.list_subtasks(task_id, page=3, page_size=3)
    seen = [r.spec_id for p in (page1, page2, page3) for r in p["items"]]
    assert seen == ids
    assert page1["total"] == 7


def test_run_contradicting_attempts_is_rejected(store) -> None:
    task_id = _make_task(store)
    ids = _make_specs(store, task_id, n=1)
    bad = (ids[0], SUCCESS, {"x": 1}, None, {},
           [(1, LOGICAL_FAILURE, 0.0, 0.1, "no")])
    with pytest.raises(IntegrityViolation):
        store.record_runs(task_id, [bad])


def test_run_for_unknown_spec_is_rejected(store) -> None:
    task_id = _make_task(store)
    with pytest.raises(IntegrityViolation):
        store.record_runs(task_id, [_run_row("never-recorded")])


def test_subtask_result_includes_attempts_and_artifacts(store, blobs) -> None:
    task_id = _make_task(store)
    ids = _make_specs(store, task_id, n=1)
    store.record_runs(task_id, [_run_row(ids[0], attempts=3)])
    ref = blobs.put(b"artifact body")
    store.record_artifact(task_id, "a0001", ids[0], ref, "notes.txt",
                          "text/plain", "artifact…")
    out = store.get_subtask_result(task_id, ids[0])
    assert out["run"].status == SUCCESS
    assert [a.outcome for a in out["attempts"]] == \
        [TRANSIENT_FAILURE, TRANSIENT_FAILURE, SUCCESS]
    assert out["artifact_ids"] == ["a0001"]
    assert out["run"].metrics == {"tokens": 10}


def test_artifact_requires_existing_subtask(store, blobs) -> None:
    task_id = _make_task(store)
    ref = blobs.put(b"body")
    with pytest.raises(IntegrityViolation):
        store.record_artifact(task_id, "a0001", "ghost-spec", ref, "n", None, "")


def test_artifact_blob_must_resolve_when_store_is_wired(tmp_path, blobs) -> None:
    from fanout.blobs import BlobRef
    store = TaskStateStore(tmp_path / "state.db", blobs=blobs)
    try:
        task_id = _make_task(store)
        ids = _make_specs(store, task_id, n=1)
        store.record_runs(task_id, [_run_row(ids[0])])
        ghost = BlobRef("0" * 64, 4)
        with pytest.raises(IntegrityViolation):
            store.record_artifact(task_id, "a0001", ids[0], ghost, "n", None, "")
    finally:
        store.close()


def test_event_sequence_is_dense_and_ordered(store) -> None:
    task_id = _make_task(store)
    other = _make_task(store, "task-2")
    for i in range(5):
        store.append_event(task_id, "probe", {"i": i})
    store.append_event(other, "probe", {"i": 99})
    events = store.read_events(task_id)
    assert [e.seq for e in events] == [1, 2, 3, 4, 5]
    assert [e.payload["i"] for e in events] == [0, 1, 2, 3, 4]
    # per-task sequences are independent
    assert store.read_events(other)[0].seq == 1


def test_event_export_round_trips(store, tmp_path) -> None:
    import json
    task_id = _make_task(store)
    for i in range(3):
        store.append_event(task_id, "k", {"i": i})
    out = tmp_path / "events.jsonl"
    n = store.export_events(task_id, out)
    assert n == 3
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert [l["seq"] for l in lines] == [1, 2, 3]


def test_reopen_sees_everything(tmp_path) -> None:
    path = tmp_path / "state.db"
    store = TaskStateStore(path)
    task_id = _make_task(store)
    store.write_checkpoint(task_id, 1, {"plan": "p"})
    ids = _make_specs(store, task_id)
    store.record_runs(task_id, [_run_row(sid) for sid in ids])
    store.append_event(task_id, "k", {})
    store.close()

    again = TaskStateStore(path)
    try:
        assert again.get_task(task_id).status == "running"
        assert again.recover_latest_checkpoint(task_id).round == 1
        assert again.list_subtasks(task_id)["total"] == 3
        assert len(again.read_events(task_id)) == 1
    finally:
        again.close()


_KILL_SCRIPT = """
import sys, time
from fanout.state import TaskStateStore
store = TaskStateStore(sys.argv[1])
store.create_task("t", "q")
for n in range(1, 4):
    store.write_checkpoint("t", n, {"round": n})
store.append_event("t", "written", {})
print("READY", flush=True)
time.sleep(60)
"""


def test_acknowledged_writes_survive_a_kill(tmp_path) -> None:
    """SIGKILL the writing process mid-life; a fresh reader must see every
    acknowledged write."""
    path = tmp_path / "state.db"
    proc = subprocess.Popen(
        [sys.executable, "-c", textwrap.dedent(_KILL_SCRIPT), str(path)],
        stdout=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline().strip()
        assert line == "READY"
        os.kill(proc.pid, signal.SIGKILL)
        proc.wait(timeout=10)
    finally:
        if proc.poll() is None:
            proc.kill()
    store = TaskStateStore(path)
    try:
        assert store.recover_latest_checkpoint("t").round == 3
        assert len(store.read_events("t")) == 1
    finally:
        store.close()


def test_concurrent_writers_interleave_safely(store) -> None:
    import threading
    task_id = _make_task(store)
    errors: list[BaseException] = []

    def emit(tag: str) -> None:
        try:
            for i in range(50):
                store.append_event(task_id, tag, {"i": i})
        except BaseException as err:
            errors.append(err)

    threads = [threading.Thread(target=emit, args=(f"w{t}",)) for t in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    events = store.read_events(task_id)
    assert [e.seq for e in events] == list(range(1, 201))
