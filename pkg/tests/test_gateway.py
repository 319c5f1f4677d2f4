from __future__ import annotations

import json

import pytest

from fanout.errors import (MalformedRequest, ScriptGap,
                           SchemaValidationFailure, TokenBudgetExceeded,
                           TransportFault, UnknownScope)
from fanout.gateway import (ChatRequest, Gateway, Message, ScriptedBackend,
                            ToolCall, ToolSignature, Usage, UsageLedger)
from fanout.tables import Schema


def _make_request(content="please summarize the scene", *, tools=(),
                  schema=None, grade="worker", budget=1 << 20, scope=()):
    return ChatRequest(messages=(Message("system", "you are a worker"),
                                 Message("user", content)),
                       tools=tuple(tools), output_schema=schema,
                       model_hint=grade, token_budget=budget, scope=scope)


def _make_gateway(rules, **kwargs) -> Gateway:
    return Gateway(ScriptedBackend({"worker": rules}), **kwargs)


def test_text_rule_matches_by_substring() -> None:
    gw = _make_gateway([
        {"when": {"contains": "summarize"}, "respond": {"text": "a summary"}},
        {"respond": {"text": "fallback"}}])
    assert gw.complete(_make_request()).text == "a summary"
    assert gw.complete(_make_request("something else")).text == "fallback"


def test_identical_requests_get_identical_responses() -> None:
    rules = [{"respond": {"text": "fingerprint {sha8}"}}]
    first = _make_gateway(rules).complete(_make_request())
    second = _make_gateway(rules).complete(_make_request())
    assert first.text == second.text
    assert first.usage == second.usage


def test_substitutions_inject_input_fingerprint_and_head() -> None:
    gw = _make_gateway([{"respond": {"text": "{sha8}:{head:7}"}}])
    out = gw.complete(_make_request("The   quick brown fox"))
    digest, head = out.text.split(":")
    assert len(digest) == 8 and all(c in "0123456789abcdef" for c in digest)
    assert head == "The qui"


def test_once_rules_are_consumed_in_order() -> None:
    gw = _make_gateway([
        {"respond": {"text": "first"}, "once": True},
        {"respond": {"text": "second"}, "once": True},
        {"respond": {"text": "steady"}}])
    outs = [gw.complete(_make_request()).text for _ in range(4)]
    assert outs == ["first", "second", "steady", "steady"]


def test_mode_predicate_routes_tool_requests() -> None:
    sig = ToolSignature("list_tables", "lists tables")
    gw = _make_gateway([
        {"when": {"mode": "tool_calls"},
         "respond": {"tool_calls": [{"name": "list_tables",
                                     "arguments": {"page": 1}}]}},
        {"respond": {"text": "plain"}}])
    out = gw.complete(_make_request(tools=[sig]))
    assert out.kind == "tool_calls"
    assert out.tool_calls[0] == ToolCall("call1", "list_tables", {"page": 1})
    assert gw.complete(_make_request()).kind == "text"


def test_lacks_predicate() -> None:
    gw = _make_gateway([
        {"when": {"lacks": "# Round 2"}, "respond": {"text": "early"}},
        {"respond": {"text": "late"}}])
    assert gw.complete(_make_request("# Round 1 begins")).text == "early"
    assert gw.complete(_make_request("# Round 2 begins")).text == "late"


def test_no_matching_rule_is_a_loud_scripting_error() -> None:
    gw = _make_gateway([{"when": {"contains": "never-present"},
                         "respond": {"text": "x"}}])
    with pytest.raises(ScriptGap):
        gw.complete(_make_request())


def test_fail_times_faults_then_recovers() -> None:
    gw = _make_gateway([{"respond": {"text": "ok"}, "fail_times": 2}])
    for _ in range(2):
        with pytest.raises(TransportFault):
            gw.complete(_make_request())
    assert gw.complete(_make_request()).text == "ok"


def test_structured_output_validates_against_schema() -> None:
    schema = Schema.of(("title", "text"), ("words", "integer"))
    gw = _make_gateway([
        {"when": {"mode": "structured"},
         "respond": {"structured": {"title": "Act I", "words": 40}}}])
    out = gw.complete(_make_request(schema=schema))
    assert out.kind == "structured"
    assert out.structured == {"title": "Act I", "words": 40}


def test_invalid_structured_output_is_reasked_then_accepted() -> None:
    schema = Schema.of(("title", "text"), ("words", "integer"))
    gw = _make_gateway([
        {"when": {"mode": "structured"},
         "respond": {"structured": {"title": "Act I"}}, "once": True},
        {"when": {"contains": "failed validation", "mode": "structured"},
         "respond": {"structured": {"title": "Act I", "words": 40}}}])
    out = gw.complete(_make_request(schema=schema))
    assert out.structured == {"title": "Act I", "words": 40}


def test_structured_gives_up_after_two_reasks() -> None:
    schema = Schema.of(("words", "integer"))
    gw = _make_gateway([
        {"when": {"mode": "structured"},
         "respond": {"structured": {"words": "forty"}}}])
    with pytest.raises(SchemaValidationFailure):
        gw.complete(_make_request(schema=schema))


def test_reask_count_is_exactly_two() -> None:
    schema = Schema.of(("words", "integer"))
    backend = ScriptedBackend({"worker": [
        {"when": {"mode": "structured"},
         "respond": {"structured": {"words": "forty"}}}]})
    calls = 0
    real = backend.respond

    def counting(request):
        nonlocal calls
        calls += 1
        return real(request)

    backend.respond = counting
    with pytest.raises(SchemaValidationFailure):
        Gateway(backend).complete(_make_request(schema=schema))
    assert calls == 3  # the first ask plus exactly two re-asks


def test_budget_exhaustion() -> None:
    gw = _make_gateway([{"respond": {"text": "x"}}])
    with pytest.raises(TokenBudgetExceeded):
        gw.complete(_make_request("long prompt " * 50, budget=10))


def test_malformed_requests_rejected() -> None:
    gw = _make_gateway([{"respond": {"text": "x"}}])
    with pytest.raises(MalformedRequest):
        gw.complete(ChatRequest(messages=()))
    with pytest.raises(MalformedRequest):
        gw.complete(ChatRequest(messages=(Message("oracle", "hi"),)))
    with pytest.raises(MalformedRequest):
        gw.complete(ChatRequest(messages=(
            Message("tool-result", "out", tool_call_id="call9"),)))
    with pytest.raises(MalformedRequest):
        gw.complete(_make_request(
            tools=[ToolSignature("t", "d")],
            schema=Schema.of(("a", "text"))))


def test_tool_result_referencing_prior_call_is_well_formed() -> None:
    gw = _make_gateway([{"respond": {"text": "done"}}])
    request = ChatRequest(messages=(
        Message("user", "go"),
        Message("assistant", "", tool_calls=(
            ToolCall("call1", "list_tables", {}),)),
        Message("tool-result", "[]", tool_call_id="call1")))
    assert gw.complete(request).text == "done"


def test_usage_accumulates_per_scope_chain() -> None:
    ledger = UsageLedger()
    gw = _make_gateway(
        [{"respond": {"text": "y"},
          "usage": {"input_tokens": 100, "output_tokens": 50}}],
        ledger=ledger)
    for i in range(3):
        gw.complete(_make_request(scope=("task-1", f"s{i}")))
    report = ledger.report("task-1")
    assert report["input_tokens"] == 300
    assert report["output_tokens"] == 150
    assert report["completions"] == 3
    sub = ledger.report("s0")
    assert (sub["input_tokens"], sub["output_tokens"]) == (100, 50)


def test_cost_arithmetic_from_rate_table() -> None:
    ledger = UsageLedger(rates={"worker": (1e-6, 2e-6)})
    gw = _make_gateway(
        [{"respond": {"text": "y"},
          "usage": {"input_tokens": 100, "output_tokens": 50}}],
        ledger=ledger)
    for _ in range(3):
        gw.complete(_make_request(scope=("t",)))
    assert ledger.report("t")["cost"] == pytest.approx(0.0006)


def test_unknown_scope_and_zero_totals() -> None:
    ledger = UsageLedger()
    with pytest.raises(UnknownScope):
        ledger.report("ghost")
    zeros = ledger.report("ghost", strict=False)
    assert zeros["input_tokens"] == 0 and zeros["cost"] == 0.0


def test_reasks_spend_tokens_once_recorded() -> None:
    schema = Schema.of(("words", "integer"))
    ledger = UsageLedger()
    gw = _make_gateway([
        {"when": {"mode": "structured"},
         "respond": {"structured": {"words": "x"}}, "once": True,
         "usage": {"input_tokens": 10, "output_tokens": 5}},
        {"when": {"mode": "structured"},
         "respond": {"structured": {"words": 7}},
         "usage": {"input_tokens": 10, "output_tokens": 5}}],
        ledger=ledger)
    out = gw.complete(_make_request(schema=schema, scope=("t",)))
    assert out.structured == {"words": 7}
    report = ledger.report("t")
    # both the failed ask and the successful re-ask are paid for
    assert report["input_tokens"] == 20
    assert report["completions"] == 1


def test_fixture_file_round_trip(tmp_path) -> None:
    fixture = {"format": "fanout-script/1",
               "grades": {"worker": [{"respond": {"text": "from file"}}]}}
    path = tmp_path / "script.json"
    path.write_text(json.dumps(fixture), encoding="utf-8")
    gw = Gateway(ScriptedBackend.from_fixture_file(path))
    assert gw.complete(_make_request()).text == "from file"


def test_fixture_file_rejects_unknown_format(tmp_path) -> None:
    path = tmp_path / "script.json"
    path.write_text(json.dumps({"format": "other/9"}), encoding="utf-8")
    with pytest.raises(ScriptGap):
        ScriptedBackend.from_fixture_file(path)


def test_synthesized_usage_scales_with_text() -> None:
    gw = _make_gateway([{"respond": {"text": "four000chars" * 100}}])
    short = gw.complete(_make_request("hi"))
    assert short.usage.output_tokens == 300  # 1200 chars / 4
    assert short.usage.input_tokens > 0


def test_max_in_flight_is_respected() -> None:
    import threading
    import time

    peak = 0
    active = 0
    lock = threading.Lock()

    class SlowBackend:
        def respond(self, request):
            nonlocal peak, active
            with lock:
                active += 1
                peak = max(peak, active)
            time.sleep(0.02)
            with lock:
                active -= 1
            return ScriptedBackend(
                {"worker": [{"respond": {"text": "z"}}]}).respond(request)

    gw = Gateway(SlowBackend(), max_in_flight=3)
    threads = [threading.Thread(target=gw.complete, args=(_make_request(),))
               for _ in range(12)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak <= 3
