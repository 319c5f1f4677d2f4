"""Round-loop behavior: phases, gate, checkpoints, recovery, budgets."""

from __future__ import annotations

import json

import pytest

from fanout.blobs import BlobProxy, BlobStore
from fanout.errors import ContextBudgetError, TaskFailed
from fanout.fabric import SubtaskFabric
from fanout.gateway import (PLANNER, TOOL_RESULT, WORKER, Gateway, Message,
                            ScriptedBackend)
from fanout.manager import (ELISION_MARK, TaskManager, ToolSuite,
                            render_context, restore_suite, state_block)
from fanout.registry import CapabilityRegistry, PresetStore
from fanout.state import TaskStateStore
from fanout.tables.analytics import Analytics
from fanout.tables.catalog import TableCatalog
from fanout.tables.schema import Record, Schema
from fanout.worker import LlmWorker, WorkerRouter


def _make_world(tmp_path, planner_rules, worker_rules=(), rows=4):
    blobs = BlobStore(tmp_path / "blobs")
    catalog = TableCatalog(blobs)
    state = TaskStateStore(tmp_path / "state.db", blobs=blobs)
    presets = PresetStore(CapabilityRegistry())
    presets.upsert("writer", "You write.", ())
    backend = ScriptedBackend({PLANNER: list(planner_rules),
                               WORKER: list(worker_rules)})
    gateway = Gateway(backend)
    workers = WorkerRouter(
        llm_worker=LlmWorker(gateway, BlobProxy(blobs)))
    fabric = SubtaskFabric(catalog, blobs, presets, state, workers)
    state.create_task("task1", "Summarize every work item.")
    records = [Record(f"r{i:03d}", {"item": f"item {i}"})
               for i in range(1, rows + 1)]
    catalog.register_leaf_table("work", Schema.of(("item", "text")),
                                records)
    suite = ToolSuite("task1", catalog, Analytics(catalog), fabric, state,
                      presets)
    return {"blobs": blobs, "catalog": catalog, "state": state,
            "presets": presets, "backend": backend, "gateway": gateway,
            "fabric": fabric, "suite": suite}


def _manager(world, **kwargs):
    return TaskManager("task1", world["gateway"], world["suite"], **kwargs)


def _rule(mode, contains, respond, **extra):
    rule = {"when": {"mode": mode, "contains": contains},
            "respond": respond, "once": True}
    rule.update(extra)
    return rule


def _report(proposal, accomplishments=("worked",), contains="# Round report",
            **extra):
    return _rule("structured", contains,
                 {"structured": {"accomplishments": list(accomplishments),
                                 "next_steps": [], "critical_blockers": [],
                                 "proposed_transition": proposal}}, **extra)


def _accept(contains="# Delegation gate"):
    return _rule("structured", contains,
                 {"structured": {"verdict": "accept", "reason": "fine"}})


_CONTRACT_CALLS = {"tool_calls": [
    {"name": "write_plan", "arguments": {
        "partition_strategy": "none needed",
        "steps": [{"description": "verify the table", "status": "done"}]}},
    {"name": "write_output_contract", "arguments": {
        "tables": [{"name": "work", "row_count": 4}]}}]}


def test_zero_subtask_task_finalizes_in_round_one(tmp_path):
    world = _make_world(tmp_path, [
        _rule("tool_calls", "# Round 1", _CONTRACT_CALLS),
        _rule("tool_calls", "# Round 1", {"text": "Contract already holds."}),
        _report("finalize"),
        _accept(),
    ])
    final = _manager(world).run()
    assert final["tables"] == [{"name": "work", "id": "t0001", "rows": 4}]
    assert world["state"].get_task("task1").status == "finalized"
    kinds = [e.kind for e in world["state"].read_events("task1")]
    assert kinds == ["round_started", "round_reported",
                     "transition_proposed", "gate_decision",
                     "round_checkpointed", "task_finalized"]
    checkpoint = world["state"].recover_latest_checkpoint("task1")
    assert checkpoint.round == 1
    assert checkpoint.payload["contract"]["tables"][0]["name"] == "work"
    world["state"].close()


def test_round_one_prompt_explores_local_state_not_raw_rows(tmp_path):
    world = _make_world(tmp_path, [], rows=100)
    suite = world["suite"]
    block = state_block(suite, "query", 1, None)
    assert "# Round 1" in block
    assert "Explore your local state" in block
    assert '"rows":100' in block.replace(" ", "")
    # digests clip sample values, so full row payloads never appear
    assert block.count("item 9") <= 3
    block2 = state_block(suite, "query", 2, {"batch_id": "b001"})
    assert "Explore your local state" not in block2
    assert "# Round 2" in block2
    assert "b001" in block2
    world["state"].close()


def test_transcript_elision_drops_oldest_tool_results_first(tmp_path):
    world = _make_world(tmp_path, [])
    transcript = []
    for i in range(1, 7):
        transcript.append(Message("assistant", "", tool_calls=()))
        transcript.append(Message(TOOL_RESULT, f"result {i} " + "x" * 400,
                                  tool_call_id=f"call{i}"))
    baseline = render_context(world["suite"], "q", 2, [], None)
    floor = sum(len(m.content) for m in baseline)
    budget = floor + 3 * 450
    rendered = render_context(world["suite"], "q", 2, transcript, None,
                              context_budget=budget)
    elided = [m for m in rendered if m.content == ELISION_MARK]
    kept = [m for m in rendered
            if m.role == TOOL_RESULT and m.content != ELISION_MARK]
    assert elided, "expected at least one elided tool result"
    assert kept, "expected newest tool results to survive"
    assert all("result 6" not in m.content for m in elided)
    assert sum(len(m.content) for m in rendered) <= budget
    with pytest.raises(ContextBudgetError):
        render_context(world["suite"], "q", 2, transcript, None,
                       context_budget=floor - 1)
    world["state"].close()


def test_dispatch_round_runs_a_batch_then_finalizes(tmp_path):
    world = _make_world(tmp_path, [
        _rule("tool_calls", "# Round 1", {"tool_calls": [
            {"name": "write_plan", "arguments": {
                "partition_strategy": "one subtask per row",
                "steps": [{"description": "summarize rows",
                           "status": "in-progress"}]}},
            {"name": "write_output_contract", "arguments": {
                "tables": [{"name": "summaries", "row_count": 4}]}},
            {"name": "stage_dataset_subtask", "arguments": {
                "table": "work", "preset": "writer",
                "instruction": "Summarize {{item}}.",
                "output_schema": [["summary", "text"]],
                "bindings": {"item": {"column": "item"}}}}]}),
        _rule("tool_calls", "# Round 1", {"text": "Staged the map."}),
        _report("dispatch-batch"),
        _accept(),
        _rule("tool_calls", "# Round 2", {"tool_calls": [
            {"name": "rename_table", "arguments": {
                "table": "b001-results", "new_name": "summaries"}}]}),
        _rule("tool_calls", "# Round 2", {"text": "Renamed the results."}),
        _report("finalize", contains=["# Round 2", "# Round report"]),
        _accept(),
    ], worker_rules=[
        {"when": {"mode": "structured"},
         "respond": {"structured": {"summary": "done: {head:10}"}}},
    ])
    final = _manager(world).run()
    assert final["tables"][0]["name"] == "summaries"
    assert final["tables"][0]["rows"] == 4
    assert world["state"].list_specs("task1", "b001") == [
        f"b001-s{i:05d}" for i in range(1, 5)]
    checkpoint = world["state"].recover_latest_checkpoint("task1")
    assert checkpoint.round == 2
    assert checkpoint.payload["last_batch"]["batch_id"] == "b001"
    assert checkpoint.payload["last_batch"]["succeeded"] == 4
    world["state"].close()


def test_finalize_is_mechanically_rejected_while_contract_unmet(tmp_path):
    world = _make_world(tmp_path, [
        _rule("tool_calls", "# Round 1", {"tool_calls": [
            {"name": "write_output_contract", "arguments": {
                "tables": [{"name": "missing_table"}]}}]}),
        _rule("tool_calls", "# Round 1", {"text": "Trying to finish early."}),
        _report("finalize"),
        # after the mechanical rejection the manager explores again
        _rule("tool_calls", "rejected your finalize",
              {"text": "Understood, continuing."}),
        _rule("structured", "# Revised proposal",
              {"structured": {"proposed_transition": "continue"}}),
        _rule("tool_calls", "# Round 2", {"text": "Waiting."}),
        _report("continue", contains="# Round 2"),
    ])
    with pytest.raises(TaskFailed):
        _manager(world, round_budget=2).run()
    decisions = [e.payload for e in world["state"].read_events("task1")
                 if e.kind == "gate_decision"]
    assert len(decisions) == 1
    assert not decisions[0]["accepted"]
    assert decisions[0]["mechanical"]
    assert "missing_table" in decisions[0]["reason"]
    assert world["state"].get_task("task1").status == "failed"
    world["state"].close()


def test_dispatch_with_empty_staging_is_rejected(tmp_path):
    world = _make_world(tmp_path, [
        _rule("tool_calls", "# Round 1", {"text": "Nothing staged yet."}),
        _report("dispatch-batch"),
        _rule("tool_calls", "rejected your dispatch-batch",
              {"text": "I see, staging is empty."}),
        _rule("structured", "# Revised proposal",
              {"structured": {"proposed_transition": "continue"}}),
        _rule("tool_calls", "# Round 2", {"text": "Waiting."}),
        _report("continue", contains="# Round 2"),
    ])
    with pytest.raises(TaskFailed):
        _manager(world, round_budget=2).run()
    decisions = [e.payload for e in world["state"].read_events("task1")
                 if e.kind == "gate_decision"]
    assert decisions[0]["reason"] == "nothing staged"
    assert decisions[0]["mechanical"]
    world["state"].close()


def test_model_gate_rejection_returns_control_same_round(tmp_path):
    world = _make_world(tmp_path, [
        _rule("tool_calls", "# Round 1", _CONTRACT_CALLS),
        _rule("tool_calls", "# Round 1", {"text": "Ready."}),
        _report("finalize"),
        _rule("structured", "# Delegation gate",
              {"structured": {"verdict": "reject",
                              "reason": "report does not mention checks"}}),
        _rule("tool_calls", "rejected your finalize", {"text": "Re-checked."}),
        _rule("structured", "# Revised proposal",
              {"structured": {"proposed_transition": "finalize"}}),
        _accept(),
    ])
    final = _manager(world).run()
    assert final["tables"][0]["name"] == "work"
    decisions = [e.payload for e in world["state"].read_events("task1")
                 if e.kind == "gate_decision"]
    assert [d["accepted"] for d in decisions] == [False, True]
    assert not decisions[0]["mechanical"]
    reports = [e for e in world["state"].read_events("task1")
               if e.kind == "round_reported"]
    assert len(reports) == 1, "a rejected gate must not duplicate the report"
    world["state"].close()


def test_unknown_transition_is_rejected_mechanically(tmp_path):
    world = _make_world(tmp_path, [
        _rule("tool_calls", "# Round 1", {"text": "Hm."}),
        _report("abdicate"),
        _rule("tool_calls", "rejected your abdicate", {"text": "Fine."}),
        _rule("structured", "# Revised proposal",
              {"structured": {"proposed_transition": "continue"}}),
        _rule("tool_calls", "# Round 2", {"text": "Waiting."}),
        _report("continue", contains="# Round 2"),
    ])
    with pytest.raises(TaskFailed):
        _manager(world, round_budget=2).run()
    decisions = [e.payload for e in world["state"].read_events("task1")
                 if e.kind == "gate_decision"]
    assert "unknown transition" in decisions[0]["reason"]
    world["state"].close()


def test_round_budget_exhaustion_fails_with_last_report(tmp_path):
    rules = []
    for n in range(1, 4):
        rules.append(_rule("tool_calls", f"# Round {n}", {"text": "thinking"}))
        rules.append(_report("continue", accomplishments=(f"round {n}",),
                             contains=[f"# Round {n}", "# Round report"]))
    world = _make_world(tmp_path, rules)
    with pytest.raises(TaskFailed, match="round budget 3"):
        _manager(world, round_budget=3).run()
    task = world["state"].get_task("task1")
    assert task.status == "failed"
    assert task.outcome["last_report"]["accomplishments"] == ["round 3"]
    rounds = [c.round for c in world["state"].list_checkpoints("task1")]
    assert rounds == [1, 2, 3]
    world["state"].close()


def test_exploration_stops_at_the_tool_call_budget(tmp_path):
    looping = {"when": {"mode": "tool_calls"},
               "respond": {"tool_calls": [{"name": "list_tables"}]}}
    world = _make_world(tmp_path, [
        looping,
        _report("continue"),
        _report("continue", contains="# Round 2"),
    ])
    with pytest.raises(TaskFailed):
        _manager(world, round_budget=1, tool_call_budget=5).run()
    # 5 exploration requests, 1 report, 1 failed-round marker is absent
    assert world["backend"].calls == 6
    world["state"].close()


def test_crash_between_rounds_resumes_from_the_checkpoint(tmp_path):
    class Boom(RuntimeError):
        pass

    def crash_at_three(round_no):
        if round_no == 3:
            raise Boom("simulated crash")

    planner = [
        _rule("tool_calls", "# Round 1", {"tool_calls": [
            {"name": "write_plan", "arguments": {
                "partition_strategy": "map then reduce",
                "steps": [{"description": "map rows",
                           "status": "in-progress"}]}},
            {"name": "write_output_contract", "arguments": {
                "tables": [{"name": "final_summary", "row_count": 1}]}},
            {"name": "stage_dataset_subtask", "arguments": {
                "table": "work", "preset": "writer",
                "instruction": "Summarize {{item}}.",
                "output_schema": [["summary", "text"]],
                "bindings": {"item": {"column": "item"}}}}]}),
        _rule("tool_calls", "# Round 1", {"text": "Staged the map tier."}),
        _report("dispatch-batch"),
        _accept(),
        _rule("tool_calls", "# Round 2", {"tool_calls": [
            {"name": "create_grouped_table", "arguments": {
                "table": "b001-results", "keys": [],
                "aggregations": [["all_summaries", "collect", "summary"]],
                "name": "rollup"}},
            {"name": "stage_dataset_subtask", "arguments": {
                "table": "rollup", "preset": "writer",
                "instruction": "Merge: {{all_summaries}}",
                "output_schema": [["summary", "text"]],
                "bindings": {"all_summaries": {"column": "all_summaries"}}}}]}),
        _rule("tool_calls", "# Round 2", {"text": "Staged the reduce tier."}),
        _report("dispatch-batch", contains=["# Round 2", "# Round report"]),
        _accept(),
    ]
    resumed = [
        _rule("tool_calls", "# Round 3", {"tool_calls": [
            {"name": "rename_table", "arguments": {
                "table": "b002-results", "new_name": "final_summary"}}]}),
        _rule("tool_calls", "# Round 3", {"text": "Contract satisfied."}),
        _report("finalize", contains=["# Round 3", "# Round report"]),
        _accept(),
    ]
    worker_rules = [{"when": {"mode": "structured"},
                     "respond": {"structured": {"summary": "s({head:8})"}}}]

    world = _make_world(tmp_path, planner, worker_rules)
    with pytest.raises(Boom):
        _manager(world, round_hook=crash_at_three).run()
    world["state"].close()

    # a fresh process: new stores over the same paths, state rebuilt
    blobs = BlobStore(tmp_path / "blobs")
    state = TaskStateStore(tmp_path / "state.db", blobs=blobs)
    presets = PresetStore(CapabilityRegistry())
    backend = ScriptedBackend({PLANNER: resumed, WORKER: list(worker_rules)})
    gateway = Gateway(backend)
    workers = WorkerRouter(llm_worker=LlmWorker(gateway, BlobProxy(blobs)))
    suite, checkpoint = restore_suite("task1", blobs, state, presets,
                                      workers)
    assert checkpoint.round == 2
    assert suite.plan is not None
    assert suite.contract.specs[0].name == "final_summary"
    assert suite.catalog.by_name("rollup") is not None
    manager = TaskManager("task1", gateway, suite,
                          start_round=checkpoint.round + 1,
                          batch_counter=checkpoint.payload["batch_counter"],
                          last_batch=checkpoint.payload["last_batch"])
    final = manager.run()
    assert final["tables"] == [{"name": "final_summary", "id": "t0004",
                                "rows": 1}]
    # batch 2 ran exactly once: one run row per spec, no duplicates
    assert state.list_specs("task1", "b002") == ["b002-s00001"]
    detail = state.get_subtask_result("task1", "b002-s00001")
    assert detail["run"].attempts == 1
    rounds = [c.round for c in state.list_checkpoints("task1")]
    assert rounds == [1, 2, 3]
    state.close()


def test_at_most_one_batch_per_round(tmp_path):
    world = _make_world(tmp_path, [
        _rule("tool_calls", "# Round 1", {"tool_calls": [
            {"name": "stage_single_subtask", "arguments": {
                "preset": "writer", "instruction": "Say hi.",
                "output_schema": [["summary", "text"]]}}]}),
        _rule("tool_calls", "# Round 1", {"text": "Staged one."}),
        _report("dispatch-batch"),
        _accept(),
        _rule("tool_calls", "# Round 2", {"text": "Reviewing."}),
        _report("continue", contains="# Round 2"),
        _rule("tool_calls", "# Round 3", {"text": "Reviewing."}),
        _report("continue", contains="# Round 3"),
    ], worker_rules=[{"when": {"mode": "structured"},
                      "respond": {"structured": {"summary": "hi"}}}])
    with pytest.raises(TaskFailed):
        _manager(world, round_budget=3).run()
    events = world["state"].read_events("task1")
    by_round: dict[int, int] = {}
    current = 0
    for event in events:
        if event.kind == "round_started":
            current = event.payload["round"]
        if event.kind == "batch_dispatched":
            by_round[current] = by_round.get(current, 0) + 1
    assert by_round == {1: 1}
    world["state"].close()
