"""Sandbox wiring: capability launchers and the leader/helper router.

A capability's locator decides how it runs:

  ``python:module:attr``  in-process; for a tool, ``attr(arguments,
                          workspace) -> dict``; for a service,
                          ``attr(workspace) -> object`` with
                          ``start()``, ``stop()``, and
                          ``handle(payload) -> dict``
  ``exec:argv...``        a subprocess tool; arguments arrive as JSON on
                          stdin, the result is JSON on stdout, and the
                          working directory is the sandbox workspace

Helper services talk to the leader and to nobody else; the router is
the only message path and it refuses helper-to-helper routes.
"""

from __future__ import annotations

import importlib
import json
import shlex
import subprocess
from dataclasses import dataclass

from ..errors import SandboxStartFailure, TopologyViolation, WorkerFailure
from ..registry import SERVICE, TOOL, Capability
from .workspace import Workspace

LEADER = "leader"

EXEC_TOOL_TIMEOUT = 60.0


@dataclass(frozen=True)
class SandboxPlan:
    """What one full-agent attempt will run, decided before it starts."""

    spec_id: str
    leader_preset: str
    tools: tuple[str, ...]
    services: tuple[str, ...]
    workspace: str
    endpoint: str


class SandboxRouter:
    """Sandbox-local messaging; the only legal routes touch the leader."""

    def __init__(self) -> None:
        self._services: dict[str, object] = {}
        self.inbox: list[tuple[str, dict]] = []

    def attach(self, name: str, service: object) -> None:
        self._services[name] = service

    def helpers(self) -> tuple[str, ...]:
        return tuple(sorted(self._services))

    def send(self, sender: str, target: str, payload: dict) -> dict:
        if sender == LEADER:
            service = self._services.get(target)
            if service is None:
                raise TopologyViolation(f"no helper service {target!r}; "
                                        f"helpers: {list(self.helpers())}")
            return service.handle(payload)
        if target == LEADER:
            self.inbox.append((sender, payload))
            return {"delivered": True}
        raise TopologyViolation(
            f"helper {sender!r} may not message helper {target!r}; helpers "
            f"only talk to the leader")


def _resolve_python(locator: str):
    _, module_name, attr = locator.split(":", 2)
    try:
        module = importlib.import_module(module_name)
        return getattr(module, attr)
    except (ImportError, AttributeError) as err:
        raise SandboxStartFailure(f"cannot load {locator!r}: {err}") from err


def build_tool(capability: Capability, workspace: Workspace):
    """Returns ``call(arguments: dict) -> dict`` for one tool capability."""
    if capability.kind != TOOL:
        raise WorkerFailure(f"capability {capability.name!r} is not a tool")
    locator = capability.locator
    if locator.startswith("python:"):
        fn = _resolve_python(locator)

        def call_python(arguments: dict) -> dict:
            return fn(arguments, workspace)

        return call_python
    if locator.startswith("exec:"):
        argv = shlex.split(locator[len("exec:"):])

        def call_exec(arguments: dict) -> dict:
            proc = subprocess.run(
                argv, input=json.dumps(arguments).encode("utf-8"),
                capture_output=True, cwd=workspace.root,
                timeout=EXEC_TOOL_TIMEOUT)
            if proc.returncode != 0:
                tail = proc.stderr.decode("utf-8", "replace")[-500:]
                raise WorkerFailure(f"tool {capability.name!r} exited "
                                    f"{proc.returncode}: {tail}")
            try:
                return json.loads(proc.stdout.decode("utf-8"))
            except ValueError as err:
                raise WorkerFailure(f"tool {capability.name!r} wrote "
                                    f"non-JSON output") from err

        return call_exec
    raise SandboxStartFailure(f"no launcher for locator {locator!r}")


def build_service(capability: Capability, workspace: Workspace):
    """Instantiate (not start) one helper service."""
    if capability.kind != SERVICE:
        raise WorkerFailure(f"capability {capability.name!r} is not a service")
    if not capability.locator.startswith("python:"):
        raise SandboxStartFailure(
            f"service {capability.name!r}: only python: locators launch "
            f"services; got {capability.locator!r}")
    factory = _resolve_python(capability.locator)
    return factory(workspace)
