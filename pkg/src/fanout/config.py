"""Serializable runtime configuration.

A run is reproducible from the config plus the fixture files it names:
every knob that affects behavior lives here, and the file round trips
through JSON without loss.  Paths are resolved relative to the config
file's directory so a config can travel with its fixtures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .gateway.usage import DEFAULT_RATES

CONFIG_FORMAT = "fanout-config/1"


@dataclass
class RuntimeConfig:
    root: str                                   # store directory
    nodes: dict[str, int] = field(default_factory=lambda: {"local": 4})
    llm_slots: int = 256
    script_path: str | None = None              # scripted backend fixture
    provider_profile: str | None = None         # named remote profile
    capability_seed: str | None = None          # registry seed file
    round_budget: int = 12
    tool_call_budget: int = 40
    context_budget: int = 120_000
    digest_budget: int = 1024
    max_attempts: int = 3
    rates: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {g: tuple(r)
                                 for g, r in DEFAULT_RATES.items()})

    def __post_init__(self) -> None:
        if not self.root:
            raise ConfigError("config needs a root directory")
        if not self.nodes:
            raise ConfigError("config needs at least one node")
        for node, slots in self.nodes.items():
            if int(slots) < 1:
                raise ConfigError(f"node {node!r} needs at least one slot")
        if self.llm_slots < 1:
            raise ConfigError("llm_slots must be at least 1")
        if self.script_path and self.provider_profile:
            raise ConfigError("pick a scripted fixture or a provider "
                              "profile, not both")
        for name in ("round_budget", "tool_call_budget", "context_budget",
                     "digest_budget", "max_attempts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    # --- derived paths ----------------------------------------------------

    @property
    def blobs_dir(self) -> Path:
        return Path(self.root) / "blobs"

    @property
    def state_path(self) -> Path:
        return Path(self.root) / "state.db"

    @property
    def workspaces_dir(self) -> Path:
        return Path(self.root) / "workspaces"

    # --- serialization ----------------------------------------------------

    def to_payload(self) -> dict:
        return {"format": CONFIG_FORMAT, "root": self.root,
                "nodes": dict(self.nodes), "llm_slots": self.llm_slots,
                "script_path": self.script_path,
                "provider_profile": self.provider_profile,
                "capability_seed": self.capability_seed,
                "round_budget": self.round_budget,
                "tool_call_budget": self.tool_call_budget,
                "context_budget": self.context_budget,
                "digest_budget": self.digest_budget,
                "max_attempts": self.max_attempts,
                "rates": {g: list(r) for g, r in self.rates.items()}}

    @classmethod
    def from_payload(cls, payload: dict, base: Path | None = None) -> "RuntimeConfig":
        if payload.get("format") != CONFIG_FORMAT:
            raise ConfigError(f"unsupported config format "
                              f"{payload.get('format')!r}")

        def path_of(value: str | None) -> str | None:
            if value is None or base is None:
                return value
            return str((base / value).resolve()) \
                if not Path(value).is_absolute() else value

        try:
            return cls(
                root=path_of(payload["root"]),
                nodes={str(k): int(v)
                       for k, v in payload.get("nodes", {"local": 4}).items()},
                llm_slots=int(payload.get("llm_slots", 256)),
                script_path=path_of(payload.get("script_path")),
                provider_profile=payload.get("provider_profile"),
                capability_seed=path_of(payload.get("capability_seed")),
                round_budget=int(payload.get("round_budget", 12)),
                tool_call_budget=int(payload.get("tool_call_budget", 40)),
                context_budget=int(payload.get("context_budget", 120_000)),
                digest_budget=int(payload.get("digest_budget", 1024)),
                max_attempts=int(payload.get("max_attempts", 3)),
                rates={g: (float(r[0]), float(r[1]))
                       for g, r in payload.get("rates",
                                               DEFAULT_RATES).items()})
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"malformed config: {err}") from err

    @classmethod
    def from_file(cls, path: str | Path) -> "RuntimeConfig":
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"no config file at {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path} is not valid JSON: "
                              f"{err}") from err
        return cls.from_payload(payload, base=path.parent)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_payload(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
