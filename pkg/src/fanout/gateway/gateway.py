"""The single entry point every model consumer calls.

The gateway owns request validation, the token budget check, structured
output enforcement with bounded re-asks, usage recording, and an
optional in-flight cap.  Backends stay dumb: anything with a
``respond(ChatRequest) -> ChatResponse`` method plugs in, and nothing
outside this package ever names a concrete model.
"""

from __future__ import annotations

import threading

from ..errors import SchemaValidationFailure, SchemaViolation, TokenBudgetExceeded
from .scripted import estimate_tokens
from .types import (ASSISTANT, STRUCTURED, USER, ChatRequest, ChatResponse,
                    Message, Usage, conform_structured, validate_request)
from .usage import UsageLedger


class Gateway:
    def __init__(self, backend, ledger: UsageLedger | None = None,
                 re_asks: int = 2, max_in_flight: int | None = None) -> None:
        self.backend = backend
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.re_asks = re_asks
        self._gate = (threading.BoundedSemaphore(max_in_flight)
                      if max_in_flight else None)

    def complete(self, request: ChatRequest) -> ChatResponse:
        validate_request(request)
        input_estimate = estimate_tokens(request.transcript())
        if input_estimate > request.token_budget:
            raise TokenBudgetExceeded(
                f"prompt is ~{input_estimate} tokens; budget is "
                f"{request.token_budget}")
        if request.mode == STRUCTURED:
            return self._complete_structured(request)
        response = self._call(request)
        self._record(request, response.usage)
        return response

    def _call(self, request: ChatRequest) -> ChatResponse:
        if self._gate is None:
            return self.backend.respond(request)
        with self._gate:
            return self.backend.respond(request)

    def _record(self, request: ChatRequest, usage: Usage) -> None:
        if request.scope:
            self.ledger.record(request.scope, request.model_hint, usage)

    def _complete_structured(self, request: ChatRequest) -> ChatResponse:
        """Validate structured output; on failure, re-ask with the
        validation error appended, up to the configured allowance."""
        spent = Usage(0, 0)
        current = request
        last_error = "backend returned no structured object"
        for _ in range(1 + self.re_asks):
            response = self._call(current)
            spent = spent + response.usage
            if response.kind == STRUCTURED:
                try:
                    values = conform_structured(request.output_schema,
                                                response.structured)
                    self._record(request, spent)
                    return ChatResponse(kind=STRUCTURED, structured=values,
                                        usage=spent)
                except SchemaViolation as err:
                    last_error = str(err)
            else:
                last_error = f"expected a structured object, got {response.kind}"
            current = ChatRequest(
                messages=current.messages + (
                    Message(ASSISTANT, str(response.structured or response.text)),
                    Message(USER, f"That output failed validation: {last_error}. "
                                  f"Answer again with an object conforming to "
                                  f"the schema.")),
                tools=current.tools, output_schema=current.output_schema,
                model_hint=current.model_hint,
                token_budget=current.token_budget, scope=current.scope)
        self._record(request, spent)
        raise SchemaValidationFailure(
            f"structured output invalid after {self.re_asks} re-asks: "
            f"{last_error}")
