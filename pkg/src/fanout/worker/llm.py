"""The llm-only fast path: one model completion per attempt.

The worker formats the agent request and every data resource inline —
blob inputs are fetched through the node proxy and appended as
attachment sections — then makes exactly one gateway call in structured
mode.  The gateway enforces the output schema (with its own bounded
re-asks), so whatever comes back is already validated.  No tools, no
sandbox, no access to manager state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import WorkerFailure
from ..gateway import ChatRequest, Message
from ..gateway.types import SYSTEM, USER
from ..fabric.template import LLM_ONLY, SubtaskSpec


@dataclass
class WorkerResult:
    output: dict
    metrics: dict
    # [{name, ref: BlobRef, media_hint, excerpt}]; persisted by the fabric
    artifacts: list[dict] = field(default_factory=list)


def render_prompt(spec: SubtaskSpec, proxy) -> str:
    """Instruction plus inlined attachments, fetched via the proxy."""
    sections = [spec.instruction]
    for name, ref in sorted(spec.blob_inputs().items()):
        data = proxy.proxy_get(ref)
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError:
            text = f"<{ref.size} bytes of binary data, id {ref.id}>"
        sections.append(f"--- attachment {name} ---\n{text}")
    return "\n\n".join(sections)


class LlmWorker:
    """Runs llm-only specs; ``grade`` picks the model tier for the call."""

    def __init__(self, gateway, proxy, grade: str = "worker") -> None:
        self.gateway = gateway
        self.proxy = proxy
        self.grade = grade

    def run(self, spec: SubtaskSpec, attempt: int) -> WorkerResult:
        if spec.mode != LLM_ONLY:
            raise WorkerFailure(f"llm worker got a {spec.mode} spec")
        prompt = render_prompt(spec, self.proxy)
        request = ChatRequest(
            messages=(Message(SYSTEM, spec.preset_prompt),
                      Message(USER, prompt)),
            output_schema=spec.output_schema,
            model_hint=self.grade,
            scope=(spec.task_id, spec.spec_id))
        response = self.gateway.complete(request)
        return WorkerResult(
            output=response.structured,
            metrics={"input_tokens": response.usage.input_tokens,
                     "output_tokens": response.usage.output_tokens,
                     "attempt": attempt})
