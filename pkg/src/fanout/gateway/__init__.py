"""Model access: one chat contract, pluggable backends, usage accounting."""

from .gateway import Gateway
from .scripted import SCRIPT_FORMAT, ScriptedBackend, estimate_tokens
from .types import (ASSISTANT, GRADES, NANO, PLANNER, STRUCTURED, SYSTEM,
                    TEXT, TOOL_CALLS, TOOL_RESULT, USER, WORKER, ChatRequest,
                    ChatResponse, Message, ToolCall, ToolSignature, Usage,
                    conform_structured, validate_request)
from .usage import DEFAULT_RATES, UsageLedger

__all__ = ["ASSISTANT", "DEFAULT_RATES", "GRADES", "Gateway", "Message",
           "NANO", "PLANNER", "SCRIPT_FORMAT", "STRUCTURED", "SYSTEM",
           "ScriptedBackend", "TEXT", "TOOL_CALLS", "TOOL_RESULT", "ToolCall",
           "ToolSignature", "USER", "Usage", "UsageLedger", "WORKER",
           "ChatRequest", "ChatResponse", "conform_structured",
           "estimate_tokens", "validate_request"]
