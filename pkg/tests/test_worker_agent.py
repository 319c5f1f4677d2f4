"""Full-agent runs: sandbox lifecycle, tools, helpers, and validation."""

from __future__ import annotations

import threading

import pytest

import sandbox_stubs
from fanout.blobs import BlobProxy, BlobStore
from fanout.errors import (SandboxStartFailure, StepBudgetExceeded,
                           TopologyViolation, WorkerFailure, WorkspaceEscape)
from fanout.fabric import FULL_AGENT, SubtaskTemplate, expand
from fanout.gateway import Gateway, ScriptedBackend, UsageLedger, WORKER
from fanout.registry import AgentPreset, Capability, CapabilityRegistry
from fanout.tables.schema import Record, Schema
from fanout.worker import (LEADER, FullAgentWorker, STEP_BUDGET,
                           SandboxRouter, Workspace, validate_output)

_OUT = Schema.of(("words", "integer"))
_PRESET = AgentPreset("counter", "You count words carefully.", ())


def _registry(*caps: Capability) -> CapabilityRegistry:
    registry = CapabilityRegistry()
    for cap in caps:
        registry.register(cap)
    return registry


def _tool(cap_id: str, name: str, attr: str) -> Capability:
    return Capability(cap_id, name, f"stub tool {name}", "tool",
                      f"python:sandbox_stubs:{attr}")


def _service(cap_id: str, name: str, attr: str) -> Capability:
    return Capability(cap_id, name, f"stub service {name}", "service",
                      f"python:sandbox_stubs:{attr}")


def _make_spec(tmp_path, capability_ids=(), instruction="Count the words.",
               output_schema=_OUT, body=None):
    blobs = BlobStore(tmp_path / "blobs")
    preset = AgentPreset("counter", "You count words carefully.",
                         tuple(capability_ids))
    bindings = {}
    record = None
    source = None
    if body is not None:
        ref = blobs.put(body.encode("utf-8"), hint="scene")
        bindings = {"body": {"column": "body"}}
        instruction = instruction + " {{body}}"
        record = Record("r01", {"body": ref})
        source = "t0001"
    template = SubtaskTemplate("counter", instruction, bindings=bindings,
                               data_source=source, mode=FULL_AGENT,
                               output_schema=output_schema)
    spec = expand(template, preset, "task1", "b001-s00001", blobs,
                  record=record, source_table=source)
    return spec, blobs


def _make_worker(tmp_path, blobs, rules, capabilities=(), step_budget=None,
                 ledger=None):
    backend = ScriptedBackend({WORKER: rules})
    gateway = Gateway(backend, ledger=ledger)
    proxy = BlobProxy(blobs)
    worker = FullAgentWorker(gateway, proxy, _registry(*capabilities),
                             tmp_path / "work",
                             step_budget=step_budget or STEP_BUDGET)
    return worker, backend


def _call(tool: str, **arguments) -> dict:
    return {"name": tool, "arguments": arguments}


def test_default_step_budget_is_twenty():
    assert STEP_BUDGET == 20


def test_tool_invoked_and_result_fed_back(tmp_path):
    spec, blobs = _make_spec(tmp_path, capability_ids=("cap1",))
    worker, backend = _make_worker(tmp_path, blobs, [
        {"once": True, "respond": {"tool_calls": [
            _call("word_count", text="two households both alike")]}},
        {"when": {"contains": '"words": 4'},
         "respond": {"tool_calls": [
             _call("write_final_output", record={"words": 4})]}},
    ], capabilities=(_tool("cap1", "word_count", "word_count"),))
    result = worker.run(spec, 1)
    assert result.output == {"words": 4}
    assert backend.calls == 2
    assert result.metrics["steps"] == 2


def test_helper_service_lifecycle_brackets_the_leader_loop(tmp_path):
    sandbox_stubs.EVENTS.clear()
    spec, blobs = _make_spec(tmp_path, capability_ids=("cap1",))
    worker, _ = _make_worker(tmp_path, blobs, [
        {"once": True, "respond": {"tool_calls": [
            _call("ask_helper", helper="echo", payload={"ping": 1})]}},
        {"when": {"contains": '"ping": 1'},
         "respond": {"tool_calls": [
             _call("write_final_output", record={"words": 1})]}},
    ], capabilities=(_service("cap1", "echo", "echo_service"),))
    result = worker.run(spec, 1)
    assert result.output == {"words": 1}
    assert sandbox_stubs.EVENTS == ["start", "handle", "stop"]


def test_service_stops_even_when_the_leader_fails(tmp_path):
    sandbox_stubs.EVENTS.clear()
    spec, blobs = _make_spec(tmp_path, capability_ids=("cap1",))
    worker, _ = _make_worker(tmp_path, blobs, [
        {"respond": {"tool_calls": [
            _call("declare_failure", reason="cannot count")]}},
    ], capabilities=(_service("cap1", "echo", "echo_service"),))
    with pytest.raises(WorkerFailure, match="cannot count"):
        worker.run(spec, 1)
    assert sandbox_stubs.EVENTS == ["start", "stop"]


def test_service_start_failure_is_transient_and_cleans_up(tmp_path):
    sandbox_stubs.EVENTS.clear()
    spec, blobs = _make_spec(tmp_path, capability_ids=("cap1", "cap2"))
    worker, backend = _make_worker(tmp_path, blobs, [], capabilities=(
        _service("cap1", "echo", "echo_service"),
        _service("cap2", "doomed", "doomed_service")))
    with pytest.raises(SandboxStartFailure, match="doomed") as err:
        worker.run(spec, 1)
    assert err.value.transient is True
    assert backend.calls == 0
    assert sandbox_stubs.EVENTS == ["start", "stop"]
    assert not (tmp_path / "work").exists() or \
        list((tmp_path / "work").iterdir()) == []


def test_step_budget_exhaustion_is_logical(tmp_path):
    spec, blobs = _make_spec(tmp_path)
    worker, backend = _make_worker(tmp_path, blobs, [
        {"respond": {"text": "still thinking"}},
    ], step_budget=4)
    with pytest.raises(StepBudgetExceeded) as err:
        worker.run(spec, 1)
    assert err.value.transient is False
    assert backend.calls == 4


def test_invalid_final_output_is_negotiated_via_tool_result(tmp_path):
    spec, blobs = _make_spec(tmp_path)
    worker, backend = _make_worker(tmp_path, blobs, [
        {"once": True, "respond": {"tool_calls": [
            _call("write_final_output",
                  record={"words": "four", "mood": "upbeat"})]}},
        {"when": {"contains": "failed validation"},
         "respond": {"tool_calls": [
             _call("write_final_output", record={"words": 4})]}},
    ])
    result = worker.run(spec, 1)
    assert result.output == {"words": 4}
    assert backend.calls == 2


def test_output_written_directly_to_the_output_path(tmp_path):
    spec, blobs = _make_spec(tmp_path, capability_ids=("cap1",))
    worker, _ = _make_worker(tmp_path, blobs, [
        {"respond": {"tool_calls": [
            _call("write_file", path="output/result.json",
                  content='{"words": 7}')]}},
    ], capabilities=(_tool("cap1", "write_file", "write_file"),))
    result = worker.run(spec, 1)
    assert result.output == {"words": 7}


def test_invalid_direct_output_fails_naming_every_field(tmp_path):
    spec, blobs = _make_spec(
        tmp_path, capability_ids=("cap1",),
        output_schema=Schema.of(("words", "integer"), ("tone", "text")))
    worker, _ = _make_worker(tmp_path, blobs, [
        {"respond": {"tool_calls": [
            _call("write_file", path="output/result.json",
                  content='{"words": "four", "extra": 1}')]}},
    ], capabilities=(_tool("cap1", "write_file", "write_file"),))
    with pytest.raises(WorkerFailure) as err:
        worker.run(spec, 1)
    text = str(err.value)
    assert "'words'" in text and "'extra'" in text and "'tone'" in text


def test_blob_inputs_materialize_as_files(tmp_path):
    spec, blobs = _make_spec(tmp_path, capability_ids=("cap1",),
                             body="the quick brown fox")
    seen = {}

    def spy(arguments, workspace):
        seen["data"] = workspace.read_bytes("inputs/body")
        return {"ok": True}

    sandbox_stubs.spy_tool = spy
    try:
        worker, _ = _make_worker(tmp_path, blobs, [
            {"once": True, "respond": {"tool_calls": [_call("spy")]}},
            {"when": {"contains": '"ok": true'},
             "respond": {"tool_calls": [
                 _call("write_final_output", record={"words": 4})]}},
        ], capabilities=(Capability("cap1", "spy", "spy", "tool",
                                    "python:sandbox_stubs:spy_tool"),))
        worker.run(spec, 1)
    finally:
        del sandbox_stubs.spy_tool
    assert seen["data"] == b"the quick brown fox"


def test_artifacts_saved_through_the_proxy(tmp_path):
    spec, blobs = _make_spec(tmp_path)
    worker, _ = _make_worker(tmp_path, blobs, [
        {"once": True, "respond": {"tool_calls": [
            _call("save_artifact", name="notes.txt",
                  content="scratch work", media_hint="text/plain")]}},
        {"when": {"contains": "stored"},
         "respond": {"tool_calls": [
             _call("write_final_output", record={"words": 2})]}},
    ])
    result = worker.run(spec, 1)
    assert len(result.artifacts) == 1
    art = result.artifacts[0]
    assert art["name"] == "notes.txt"
    assert art["excerpt"] == "scratch work"
    assert blobs.get(art["ref"]) == b"scratch work"


def test_workspace_destroyed_after_success(tmp_path):
    spec, blobs = _make_spec(tmp_path)
    worker, _ = _make_worker(tmp_path, blobs, [
        {"respond": {"tool_calls": [
            _call("write_final_output", record={"words": 0})]}},
    ])
    worker.run(spec, 1)
    leftovers = list((tmp_path / "work").glob("*")) \
        if (tmp_path / "work").exists() else []
    assert leftovers == []


def test_concurrent_sandboxes_cannot_cross_write(tmp_path):
    """Each workspace rejects paths that resolve into the other one."""
    blobs = BlobStore(tmp_path / "blobs")
    preset = AgentPreset("counter", "count", ("cap1",))
    registry = _registry(_tool("cap1", "escape_probe", "escape_probe"))
    outputs = {}
    barrier = threading.Barrier(2)

    def run_one(tag: str, other: str) -> None:
        template = SubtaskTemplate(
            "counter", f"Probe {tag}.", mode=FULL_AGENT, output_schema=_OUT)
        spec = expand(template, preset, "task1", tag, blobs)
        backend = ScriptedBackend({WORKER: [
            {"once": True, "respond": {"tool_calls": [
                _call("escape_probe", path=f"../{other}-a1/poison.txt")]}},
            {"when": {"contains": '"blocked": true'},
             "respond": {"tool_calls": [
                 _call("write_final_output", record={"words": 9})]}},
        ]})
        worker = FullAgentWorker(Gateway(backend), BlobProxy(blobs),
                                 registry, tmp_path / "work")
        barrier.wait(timeout=5)
        outputs[tag] = worker.run(spec, 1).output
    threads = [threading.Thread(target=run_one, args=("wsA", "wsB")),
               threading.Thread(target=run_one, args=("wsB", "wsA"))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert outputs == {"wsA": {"words": 9}, "wsB": {"words": 9}}


def test_workspace_rejects_absolute_and_dotdot_paths(tmp_path):
    ws = Workspace(tmp_path / "ws")
    with pytest.raises(WorkspaceEscape):
        ws.resolve("/etc/passwd")
    with pytest.raises(WorkspaceEscape):
        ws.resolve("../outside.txt")
    assert ws.resolve("sub/dir/file.txt") == \
        (tmp_path / "ws" / "sub" / "dir" / "file.txt").resolve()


def test_router_rejects_helper_to_helper_messages():
    router = SandboxRouter()
    router.attach("alpha", object())
    router.attach("beta", object())
    with pytest.raises(TopologyViolation, match="only talk to the leader"):
        router.send("alpha", "beta", {"x": 1})
    assert router.send("alpha", LEADER, {"x": 1}) == {"delivered": True}
    assert router.inbox == [("alpha", {"x": 1})]
    with pytest.raises(TopologyViolation, match="no helper service"):
        router.send(LEADER, "gamma", {})


def test_worker_surface_has_no_catalog_or_state_handles(tmp_path):
    spec, blobs = _make_spec(tmp_path)
    worker, _ = _make_worker(tmp_path, blobs, [])
    names = set(vars(worker))
    assert "catalog" not in names and "state" not in names
    from fanout.worker import LlmWorker
    llm = LlmWorker(Gateway(ScriptedBackend({})), BlobProxy(blobs))
    assert set(vars(llm)) == {"gateway", "proxy", "grade"}


def test_validate_output_accepts_and_normalizes(tmp_path):
    schema = Schema.of(("summary", "text"), ("score", "real", True))
    values = validate_output({"summary": "x", "score": 3}, schema)
    assert values == {"summary": "x", "score": 3.0}
    assert validate_output(b'{"summary": "y"}', schema) == \
        {"summary": "y", "score": None}


def test_validate_output_lists_every_problem():
    schema = Schema.of(("summary", "text"), ("score", "real"))
    with pytest.raises(WorkerFailure) as err:
        validate_output({"summary": 7, "rogue": 1}, schema)
    text = str(err.value)
    assert "'summary'" in text
    assert "'rogue'" in text
    assert "'score'" in text
