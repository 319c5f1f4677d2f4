"""Worker capability registry and per-task agent presets.

The registry is a catalog of what workers *could* run: service
capabilities (long-lived within a subtask, e.g. a local search index)
and tool capabilities (stateless single invocations).  It only describes
implementations by an opaque locator; launching them is the worker
runtime's job, so registry reads never execute anything.

Presets compose capabilities into a named worker configuration: a system
prompt plus a list of capability ids.  Presets are per task and late
bound — they hold ids, not implementations, resolved again at launch.

Seed file format (JSON): {"capabilities": [{"id", "name", "description",
"kind", "locator"}, ...]}.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import RegistryError, UnknownCapability, UnknownPreset

SERVICE = "service"
TOOL = "tool"
KINDS = (SERVICE, TOOL)


@dataclass(frozen=True)
class Capability:
    capability_id: str
    name: str
    description: str
    kind: str
    locator: str

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise RegistryError(f"capability kind must be one of {KINDS}, "
                                f"got {self.kind!r}")
        if not self.capability_id:
            raise RegistryError("capability id must be non-empty")

    def to_payload(self) -> dict:
        return {"id": self.capability_id, "name": self.name,
                "description": self.description, "kind": self.kind,
                "locator": self.locator}

    @classmethod
    def from_payload(cls, payload: dict) -> "Capability":
        return cls(payload["id"], payload["name"], payload["description"],
                   payload["kind"], payload["locator"])


@dataclass(frozen=True)
class AgentPreset:
    name: str
    system_prompt: str
    capability_ids: tuple[str, ...]

    def to_payload(self) -> dict:
        return {"name": self.name, "system_prompt": self.system_prompt,
                "capability_ids": list(self.capability_ids)}

    @classmethod
    def from_payload(cls, payload: dict) -> "AgentPreset":
        return cls(payload["name"], payload["system_prompt"],
                   tuple(payload["capability_ids"]))


class CapabilityRegistry:
    """Read-mostly capability catalog; safe for concurrent readers."""

    def __init__(self) -> None:
        self._capabilities: dict[str, Capability] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_seed_file(cls, path: str | Path) -> "CapabilityRegistry":
        registry = cls()
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        for entry in payload.get("capabilities", []):
            registry.register(Capability.from_payload(entry))
        return registry

    def register(self, capability: Capability) -> None:
        with self._lock:
            if capability.capability_id in self._capabilities:
                raise RegistryError(
                    f"capability {capability.capability_id!r} already registered")
            self._capabilities[capability.capability_id] = capability

    def list(self) -> list[Capability]:
        with self._lock:
            return sorted(self._capabilities.values(),
                          key=lambda c: c.capability_id)

    def get(self, capability_id: str) -> Capability:
        with self._lock:
            cap = self._capabilities.get(capability_id)
        if cap is None:
            raise UnknownCapability(f"no capability {capability_id!r}")
        return cap

    def has(self, capability_id: str) -> bool:
        with self._lock:
            return capability_id in self._capabilities


class PresetStore:
    """Named worker configurations for one task; create is an upsert."""

    def __init__(self, registry: CapabilityRegistry) -> None:
        self.registry = registry
        self._presets: dict[str, AgentPreset] = {}
        self._lock = threading.Lock()

    def upsert(self, name: str, system_prompt: str,
               capability_ids: list[str] | tuple[str, ...] = ()) -> AgentPreset:
        if not name:
            raise RegistryError("preset name must be non-empty")
        for cid in capability_ids:
            if not self.registry.has(cid):
                raise UnknownCapability(
                    f"preset {name!r} references unknown capability {cid!r}")
        preset = AgentPreset(name, system_prompt, tuple(capability_ids))
        with self._lock:
            self._presets[name] = preset
        return preset

    def get(self, name: str) -> AgentPreset:
        with self._lock:
            preset = self._presets.get(name)
        if preset is None:
            raise UnknownPreset(f"no preset {name!r}")
        return preset

    def list(self) -> list[AgentPreset]:
        with self._lock:
            return sorted(self._presets.values(), key=lambda p: p.name)

    def delete(self, name: str) -> None:
        with self._lock:
            if name not in self._presets:
                raise UnknownPreset(f"no preset {name!r}")
            del self._presets[name]

    def snapshot(self) -> list[dict]:
        """Checkpointable view; restore() is its inverse."""
        return [p.to_payload() for p in self.list()]

    def restore(self, payloads: list[dict]) -> None:
        with self._lock:
            self._presets = {p["name"]: AgentPreset.from_payload(p)
                             for p in payloads}
