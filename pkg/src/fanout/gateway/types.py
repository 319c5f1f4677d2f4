"""Chat-completion contract shared by every model backend.

A request is a chat transcript plus at most one special mode: tool
signatures (the model may answer with tool calls) or an output schema
(the model must answer with a conforming object).  Exactly three
response kinds exist — text, tool_calls, structured — and the gateway
guarantees a structured response validates against the request's schema
before anyone else sees it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from ..blobs.store import BlobRef
from ..errors import MalformedRequest, SchemaViolation
from ..tables.schema import BLOB, Record, Schema, conform_record

SYSTEM = "system"
USER = "user"
ASSISTANT = "assistant"
TOOL_RESULT = "tool-result"
ROLES = (SYSTEM, USER, ASSISTANT, TOOL_RESULT)

PLANNER = "planner"
WORKER = "worker"
NANO = "nano"
GRADES = (PLANNER, WORKER, NANO)

TEXT = "text"
TOOL_CALLS = "tool_calls"
STRUCTURED = "structured"


@dataclass(frozen=True)
class ToolCall:
    call_id: str
    name: str
    arguments: dict


@dataclass(frozen=True)
class ToolSignature:
    name: str
    description: str
    parameters: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Message:
    role: str
    content: str
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str | None = None


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(self.input_tokens + other.input_tokens,
                     self.output_tokens + other.output_tokens)


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    tools: tuple[ToolSignature, ...] = ()
    output_schema: Schema | None = None
    model_hint: str = WORKER
    token_budget: int = 1 << 20
    scope: tuple[str, ...] = ()

    @property
    def mode(self) -> str:
        if self.output_schema is not None:
            return STRUCTURED
        if self.tools:
            return TOOL_CALLS
        return TEXT

    def transcript(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    kind: str
    text: str | None = None
    tool_calls: tuple[ToolCall, ...] = ()
    structured: dict | None = None
    usage: Usage = Usage(0, 0)


def validate_request(request: ChatRequest) -> None:
    if not request.messages:
        raise MalformedRequest("request has no messages")
    if request.token_budget <= 0:
        raise MalformedRequest(f"token budget must be positive, "
                               f"got {request.token_budget}")
    if request.model_hint not in GRADES:
        raise MalformedRequest(f"model hint must be one of {GRADES}, "
                               f"got {request.model_hint!r}")
    if request.tools and request.output_schema is not None:
        raise MalformedRequest("a request uses tool calling or structured "
                               "output, not both")
    seen_call_ids: set[str] = set()
    for i, msg in enumerate(request.messages):
        if msg.role not in ROLES:
            raise MalformedRequest(f"message {i}: unknown role {msg.role!r}")
        if msg.tool_calls and msg.role != ASSISTANT:
            raise MalformedRequest(f"message {i}: only assistant messages "
                                   f"carry tool calls")
        if msg.role == TOOL_RESULT:
            if msg.tool_call_id is None:
                raise MalformedRequest(f"message {i}: tool-result without a "
                                       f"tool_call_id")
            if msg.tool_call_id not in seen_call_ids:
                raise MalformedRequest(
                    f"message {i}: tool-result references unknown call "
                    f"{msg.tool_call_id!r}")
        for call in msg.tool_calls:
            seen_call_ids.add(call.call_id)


def conform_structured(schema: Schema, payload: Any) -> dict:
    """Validate a raw structured payload against a table schema.

    Returns the conformed values (reals normalized to float, blob fields
    decoded to BlobRefs).  Raises SchemaViolation on any mismatch.
    Blob fields accept a ``[id, size, hint]`` payload or a BlobRef.
    """
    if not isinstance(payload, dict):
        raise SchemaViolation(f"structured output must be an object, "
                              f"got {type(payload).__name__}")
    types = {f.name: f.type for f in schema.fields}
    decoded = {}
    for k, v in payload.items():
        if types.get(k) == BLOB and isinstance(v, (list, tuple)):
            v = BlobRef.from_payload(v)
        decoded[k] = v
    rec = conform_record(schema, Record("out", decoded))
    return rec.values
