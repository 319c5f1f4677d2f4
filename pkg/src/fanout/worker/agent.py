"""The full-agent path: a sandboxed leader loop with tools and helpers.

One attempt gets a fresh workspace, its blob inputs materialized as
files, helper services started, and then a tool-calling loop: model
completion, tool execution, tool results appended, repeat.  The loop
ends when the leader delivers a final output record (which must pass
strict schema validation) or when the step budget runs out.  Helper
services and the workspace are torn down unconditionally.

The worker holds no handle to the table catalog or the task state
store; its world is the spec, the blob proxy, and the workspace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..errors import (SandboxStartFailure, StepBudgetExceeded, WorkerFailure)
from ..gateway import ChatRequest, Message, ToolSignature, Usage
from ..gateway.types import (ASSISTANT, SYSTEM, TOOL_CALLS, TOOL_RESULT,
                             USER, WORKER)
from ..fabric.template import FULL_AGENT, SubtaskSpec
from .llm import WorkerResult
from .sandbox import (LEADER, SandboxPlan, SandboxRouter, build_service,
                      build_tool)
from .validate import validate_output
from .workspace import ARTIFACTS_DIR, INPUTS_DIR, OUTPUT_RELPATH, Workspace

STEP_BUDGET = 20

_BUILTINS = (
    ToolSignature("write_final_output",
                  "Deliver the final output record and finish.",
                  {"record": "object matching the output schema"}),
    ToolSignature("save_artifact",
                  "Store a named artifact for the requesting task.",
                  {"name": "string", "content": "string",
                   "media_hint": "string, optional"}),
    ToolSignature("declare_failure",
                  "Give up on this subtask with a reason.",
                  {"reason": "string"}),
    ToolSignature("ask_helper",
                  "Send a request payload to a helper service.",
                  {"helper": "string", "payload": "object"}),
)


@dataclass
class _Run:
    """Mutable state for one attempt."""

    spec: SubtaskSpec
    workspace: Workspace
    router: SandboxRouter
    tools: dict
    output: dict | None = None
    artifacts: list[dict] = field(default_factory=list)
    counter: int = 0


class FullAgentWorker:
    """Runs full-agent specs under a per-attempt sandbox."""

    def __init__(self, gateway, proxy, registry, workspaces_root,
                 step_budget: int = STEP_BUDGET,
                 grade: str = WORKER) -> None:
        self.gateway = gateway
        self.proxy = proxy
        self.registry = registry
        self.workspaces_root = workspaces_root
        self.step_budget = step_budget
        self.grade = grade
        self.last_plan: SandboxPlan | None = None

    # --- setup ------------------------------------------------------------

    def _build(self, spec: SubtaskSpec, attempt: int):
        workspace = Workspace(
            f"{self.workspaces_root}/{spec.spec_id}-a{attempt}")
        for name, ref in sorted(spec.blob_inputs().items()):
            workspace.write_bytes(f"{INPUTS_DIR}/{name}",
                                  self.proxy.proxy_get(ref))
        router = SandboxRouter()
        tools: dict = {}
        services: list[tuple[str, object]] = []
        for cap_id in spec.preset_capabilities:
            capability = self.registry.get(cap_id)
            if capability.kind == "tool":
                tools[capability.name] = build_tool(capability, workspace)
            else:
                services.append((capability.name,
                                 build_service(capability, workspace)))
        plan = SandboxPlan(
            spec.spec_id, spec.preset_name, tuple(sorted(tools)),
            tuple(name for name, _ in services), str(workspace.root),
            f"sandbox://{spec.spec_id}-a{attempt}")
        self.last_plan = plan
        return workspace, router, tools, services

    @staticmethod
    def _start_services(router: SandboxRouter,
                        services: list[tuple[str, object]]) -> None:
        started: list[object] = []
        for name, service in services:
            try:
                service.start()
            except Exception as err:
                for earlier in started:
                    try:
                        earlier.stop()
                    except Exception:
                        pass
                raise SandboxStartFailure(
                    f"helper service {name!r} failed to start: {err}") from err
            started.append(service)
            router.attach(name, service)

    def _opening_messages(self, run: _Run) -> list[Message]:
        schema_text = json.dumps(run.spec.output_schema.to_payload())
        names = [sig.name for sig in _BUILTINS] + sorted(run.tools)
        lines = [run.spec.instruction, "",
                 f"Tools available: {', '.join(names)}.",
                 f"Output schema (name, type, nullable): {schema_text}.",
                 "Finish by calling write_final_output with a record "
                 "matching the schema, or write JSON to "
                 f"{OUTPUT_RELPATH} in your workspace."]
        inputs = sorted(run.spec.blob_inputs())
        if inputs:
            listed = ", ".join(f"{INPUTS_DIR}/{name}" for name in inputs)
            lines.append(f"Input files: {listed}.")
        helpers = run.router.helpers()
        if helpers:
            lines.append(f"Helper services: {', '.join(helpers)}.")
        return [Message(SYSTEM, run.spec.preset_prompt),
                Message(USER, "\n".join(lines))]

    # --- tool execution ---------------------------------------------------

    def _invoke(self, run: _Run, name: str, arguments: dict) -> dict:
        if name == "write_final_output":
            try:
                values = validate_output(arguments.get("record"),
                                         run.spec.output_schema)
            except WorkerFailure as err:
                return {"error": str(err)}
            run.output = values
            return {"ok": True}
        if name == "save_artifact":
            return self._save_artifact(run, arguments)
        if name == "declare_failure":
            raise WorkerFailure(f"leader declared failure: "
                                f"{arguments.get('reason', 'no reason')}")
        if name == "ask_helper":
            return run.router.send(LEADER, arguments.get("helper", ""),
                                   arguments.get("payload", {}))
        tool = run.tools.get(name)
        if tool is None:
            return {"error": f"no tool named {name!r}"}
        return tool(arguments)

    def _save_artifact(self, run: _Run, arguments: dict) -> dict:
        name = arguments.get("name")
        content = arguments.get("content")
        if not name or not isinstance(content, str):
            return {"error": "save_artifact needs a name and string content"}
        data = content.encode("utf-8")
        run.counter += 1
        run.workspace.write_bytes(f"{ARTIFACTS_DIR}/{run.counter:02d}-{name}",
                                  data)
        ref = self.proxy.put(data, hint=arguments.get("media_hint") or "artifact")
        run.artifacts.append({
            "name": name, "ref": ref,
            "media_hint": arguments.get("media_hint"),
            "excerpt": content[:160]})
        return {"stored": ref.to_payload()}

    # --- the loop ---------------------------------------------------------

    def run(self, spec: SubtaskSpec, attempt: int) -> WorkerResult:
        if spec.mode != FULL_AGENT:
            raise WorkerFailure(f"full-agent worker got a {spec.mode} spec")
        workspace, router, tools, services = self._build(spec, attempt)
        try:
            self._start_services(router, services)
            try:
                run = _Run(spec, workspace, router, tools)
                return self._loop(run)
            finally:
                for _, service in services:
                    try:
                        service.stop()
                    except Exception:
                        pass
        finally:
            workspace.destroy()

    def _loop(self, run: _Run) -> WorkerResult:
        messages = self._opening_messages(run)
        signatures = _BUILTINS + tuple(
            ToolSignature(name, f"Capability tool {name!r}.", {})
            for name in sorted(run.tools))
        spent = Usage(0, 0)
        steps = 0
        for _ in range(self.step_budget):
            steps += 1
            response = self.gateway.complete(ChatRequest(
                messages=tuple(messages), tools=signatures,
                model_hint=self.grade,
                scope=(run.spec.task_id, run.spec.spec_id)))
            spent = spent + response.usage
            if response.kind == TOOL_CALLS:
                messages.append(Message(ASSISTANT, "",
                                        tool_calls=response.tool_calls))
                for call in response.tool_calls:
                    result = self._invoke(run, call.name, call.arguments)
                    messages.append(Message(TOOL_RESULT, json.dumps(result),
                                            tool_call_id=call.call_id))
            else:
                messages.append(Message(ASSISTANT, response.text or ""))
                messages.append(Message(
                    USER, "Call write_final_output to finish, or "
                          "declare_failure to give up."))
            if run.output is None and run.workspace.output_path().exists():
                data = run.workspace.read_bytes(OUTPUT_RELPATH)
                run.output = validate_output(data, run.spec.output_schema)
            if run.output is not None:
                return WorkerResult(
                    output=run.output,
                    metrics={"input_tokens": spent.input_tokens,
                             "output_tokens": spent.output_tokens,
                             "steps": steps},
                    artifacts=run.artifacts)
        raise StepBudgetExceeded(
            f"{run.spec.spec_id}: no final output within "
            f"{self.step_budget} steps")
