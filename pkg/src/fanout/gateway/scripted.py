"""Deterministic scripted model backend.

The whole system is exercised offline by matching each request against
an ordered rule list and answering with canned responses.  Rules are
grouped by model grade; within a grade the first matching rule wins.

Rule shape (JSON fixture and in-memory alike):

    {"when":  {"contains": "substring or [list]",   # all must appear
               "lacks": "substring or [list]",      # none may appear
               "mode": "text" | "tool_calls" | "structured"},
     "respond": {"text": ...}
              | {"tool_calls": [{"name": ..., "arguments": {...}}, ...]}
              | {"structured": {...}},
     "once": false,            # true: rule is consumed by its first match
     "fail_times": 0,          # raise a fault for the first N matches
     "fail_kind": "transport" | "unavailable",
     "delay_seconds": 0.0,     # simulated latency before answering
     "usage": {"input_tokens": ..., "output_tokens": ...}}  # optional override

``contains``/``lacks`` match against the concatenated transcript, so
phase markers rendered into the prompt steer the script.  Text and
structured string values support two substitutions computed from the
request: ``{sha8}`` (first 8 hex chars of the transcript digest, an
input fingerprint) and ``{head:N}`` (first N characters of the last
message, whitespace-collapsed).

Determinism: rule matching has no randomness and no hidden clock, so
identical request sequences always produce identical response sequences.

Fixture file format: {"format": "fanout-script/1",
                      "grades": {grade: [rule, ...], ...}}.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
import time
from pathlib import Path

from ..errors import BackendUnavailable, ScriptGap, TransportFault
from .types import ChatRequest, ChatResponse, STRUCTURED, TEXT, TOOL_CALLS, ToolCall, Usage

SCRIPT_FORMAT = "fanout-script/1"

_HEAD_RE = re.compile(r"\{head:(\d+)\}")


def estimate_tokens(text: str) -> int:
    """Flat chars-over-4 estimate; only relative sizes matter offline."""
    return math.ceil(len(text) / 4)


def _as_list(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    return list(value)


def _substitute(text: str, transcript: str, last_content: str) -> str:
    if "{sha8}" in text:
        digest = hashlib.sha256(transcript.encode("utf-8")).hexdigest()[:8]
        text = text.replace("{sha8}", digest)

    def head(match: re.Match) -> str:
        n = int(match.group(1))
        return " ".join(last_content.split())[:n]

    return _HEAD_RE.sub(head, text)


def _substitute_tree(value, transcript: str, last_content: str):
    if isinstance(value, str):
        return _substitute(value, transcript, last_content)
    if isinstance(value, list):
        return [_substitute_tree(v, transcript, last_content) for v in value]
    if isinstance(value, dict):
        return {k: _substitute_tree(v, transcript, last_content)
                for k, v in value.items()}
    return value


class _Rule:
    def __init__(self, payload: dict) -> None:
        when = payload.get("when", {})
        self.contains = _as_list(when.get("contains"))
        self.lacks = _as_list(when.get("lacks"))
        self.mode = when.get("mode")
        self.respond = payload.get("respond", {})
        self.once = bool(payload.get("once", False))
        self.fail_times = int(payload.get("fail_times", 0))
        self.fail_kind = payload.get("fail_kind", "transport")
        self.delay_seconds = float(payload.get("delay_seconds", 0.0))
        self.usage = payload.get("usage")

    def matches(self, request: ChatRequest, transcript: str) -> bool:
        if self.mode is not None and request.mode != self.mode:
            return False
        if any(needle not in transcript for needle in self.contains):
            return False
        if any(needle in transcript for needle in self.lacks):
            return False
        return True


class ScriptedBackend:
    """Orders rules per grade; thread-safe; deterministic."""

    def __init__(self, grades: dict[str, list[dict]] | None = None) -> None:
        self._lock = threading.Lock()
        self._rules: dict[str, list[_Rule]] = {
            grade: [_Rule(p) for p in payloads]
            for grade, payloads in (grades or {}).items()}
        self.calls = 0          # requests seen, scripted faults included

    @classmethod
    def from_fixture_file(cls, path: str | Path) -> "ScriptedBackend":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != SCRIPT_FORMAT:
            raise ScriptGap(f"unsupported script format "
                            f"{payload.get('format')!r}")
        return cls(payload.get("grades", {}))

    def add_rule(self, grade: str, payload: dict) -> None:
        with self._lock:
            self._rules.setdefault(grade, []).append(_Rule(payload))

    def _pick(self, request: ChatRequest, transcript: str) -> _Rule:
        with self._lock:
            rules = self._rules.get(request.model_hint, [])
            for i, rule in enumerate(rules):
                if not rule.matches(request, transcript):
                    continue
                if rule.fail_times > 0:
                    rule.fail_times -= 1
                    raise (TransportFault("scripted transport fault")
                           if rule.fail_kind == "transport"
                           else BackendUnavailable("scripted backend outage"))
                if rule.once:
                    del rules[i]
                return rule
        head = " | ".join(transcript.split("\n")[-3:])[:240]
        raise ScriptGap(f"no scripted rule matched a {request.mode} request "
                        f"for grade {request.model_hint!r}; transcript tail: "
                        f"{head!r}")

    def respond(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        transcript = request.transcript()
        rule = self._pick(request, transcript)
        if rule.delay_seconds > 0:
            time.sleep(rule.delay_seconds)
        last_content = request.messages[-1].content
        out = rule.respond
        if "tool_calls" in out:
            calls = tuple(
                ToolCall(f"call{i + 1}", c["name"],
                         _substitute_tree(c.get("arguments", {}),
                                          transcript, last_content))
                for i, c in enumerate(out["tool_calls"]))
            kind, text, structured = TOOL_CALLS, None, None
            rendered = json.dumps([c.arguments for c in calls])
        elif "structured" in out:
            structured = _substitute_tree(out["structured"], transcript,
                                          last_content)
            kind, text, calls = STRUCTURED, None, ()
            rendered = json.dumps(structured)
        else:
            text = _substitute(out.get("text", ""), transcript, last_content)
            kind, structured, calls = TEXT, None, ()
            rendered = text
        if rule.usage is not None:
            usage = Usage(rule.usage["input_tokens"], rule.usage["output_tokens"])
        else:
            usage = Usage(estimate_tokens(transcript), estimate_tokens(rendered))
        return ChatResponse(kind=kind, text=text, tool_calls=calls,
                            structured=structured, usage=usage)
