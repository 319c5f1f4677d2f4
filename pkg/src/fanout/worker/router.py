"""Mode dispatch: each spec goes to the worker built for its mode."""

from __future__ import annotations

from ..errors import WorkerFailure
from ..fabric.template import FULL_AGENT, LLM_ONLY


class WorkerRouter:
    def __init__(self, llm_worker=None, full_agent_worker=None) -> None:
        self.llm_worker = llm_worker
        self.full_agent_worker = full_agent_worker

    def run(self, spec, attempt: int):
        if spec.mode == LLM_ONLY and self.llm_worker is not None:
            return self.llm_worker.run(spec, attempt)
        if spec.mode == FULL_AGENT and self.full_agent_worker is not None:
            return self.full_agent_worker.run(spec, attempt)
        raise WorkerFailure(f"no worker configured for mode {spec.mode!r}")
