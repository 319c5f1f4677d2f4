"""Subtask templates and their expansion into self-contained specs.

A template is an instruction with ``{{placeholder}}`` markers plus
bindings that say where each placeholder's value comes from: a column of
the template's data-source table, or a literal.  Expansion produces one
SubtaskSpec per source row (or exactly one for a single-shot template).

A spec must be executable with no access to manager state, so expansion
snapshots the agent preset into it and resolves every input value.
Scalar values small enough (under the inline threshold) are substituted
directly into the instruction text; larger scalars are spilled to the
blob store and, like blob-typed values, appear in the text as an
attachment marker while the worker fetches the bytes through its node
proxy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from ..blobs.store import BlobRef
from ..errors import StagingError
from ..registry import AgentPreset
from ..tables.schema import Record, Schema

LLM_ONLY = "llm-only"
FULL_AGENT = "full-agent"
MODES = (LLM_ONLY, FULL_AGENT)

INLINE_THRESHOLD = 8 * 1024

_PLACEHOLDER_OPEN = "{{"
_PLACEHOLDER_CLOSE = "}}"


def placeholders_in(text: str) -> list[str]:
    """Placeholder names in order of first appearance."""
    names: list[str] = []
    pos = 0
    while True:
        start = text.find(_PLACEHOLDER_OPEN, pos)
        if start < 0:
            return names
        end = text.find(_PLACEHOLDER_CLOSE, start)
        if end < 0:
            raise StagingError(f"unterminated placeholder at offset {start}")
        name = text[start + 2:end].strip()
        if not name:
            raise StagingError(f"empty placeholder at offset {start}")
        if name not in names:
            names.append(name)
        pos = end + 2
    return names


@dataclass(frozen=True)
class SubtaskTemplate:
    preset: str
    instruction: str
    bindings: dict[str, dict] = field(default_factory=dict)
    data_source: str | None = None
    mode: str = LLM_ONLY
    output_schema: Schema | None = None
    timeout_seconds: float = 300.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise StagingError(f"execution mode must be one of {MODES}, "
                               f"got {self.mode!r}")
        if self.output_schema is None:
            raise StagingError("template needs an output schema")
        for name, binding in self.bindings.items():
            if set(binding) not in ({"column"}, {"literal"}):
                raise StagingError(
                    f"binding {name!r} must be {{'column': ...}} or "
                    f"{{'literal': ...}}, got {sorted(binding)}")

    def to_payload(self) -> dict:
        return {"preset": self.preset, "instruction": self.instruction,
                "bindings": self.bindings, "data_source": self.data_source,
                "mode": self.mode,
                "output_schema": self.output_schema.to_payload(),
                "timeout_seconds": self.timeout_seconds}

    @classmethod
    def from_payload(cls, payload: dict) -> "SubtaskTemplate":
        return cls(payload["preset"], payload["instruction"],
                   payload["bindings"], payload["data_source"],
                   payload["mode"],
                   Schema.from_payload(payload["output_schema"]),
                   payload["timeout_seconds"])


def validate_template(template: SubtaskTemplate,
                      source_schema: Schema | None) -> None:
    """Staging-time checks: placeholders resolve, columns exist."""
    for name in placeholders_in(template.instruction):
        if name not in template.bindings:
            raise StagingError(f"instruction references {{{{{name}}}}} with "
                               f"no binding")
    for name, binding in template.bindings.items():
        if "column" not in binding:
            continue
        if source_schema is None:
            raise StagingError(f"binding {name!r} reads column "
                               f"{binding['column']!r} but the template has "
                               f"no data source")
        if not source_schema.has(binding["column"]):
            raise StagingError(f"binding {name!r}: no column "
                               f"{binding['column']!r} in the data source")


@dataclass(frozen=True)
class SubtaskSpec:
    """Self-contained work order; carries everything the worker needs."""

    spec_id: str
    task_id: str
    instruction: str
    inputs: dict[str, Any]
    preset_name: str
    preset_prompt: str
    preset_capabilities: tuple[str, ...]
    mode: str
    output_schema: Schema
    timeout_seconds: float
    source_table: str | None = None
    source_row: str | None = None

    def blob_inputs(self) -> dict[str, BlobRef]:
        return {k: v for k, v in self.inputs.items() if isinstance(v, BlobRef)}

    def to_payload(self) -> dict:
        inputs = {k: {"blob": v.to_payload()} if isinstance(v, BlobRef)
                  else {"value": v} for k, v in self.inputs.items()}
        return {"spec_id": self.spec_id, "task_id": self.task_id,
                "instruction": self.instruction, "inputs": inputs,
                "preset": {"name": self.preset_name,
                           "prompt": self.preset_prompt,
                           "capabilities": list(self.preset_capabilities)},
                "mode": self.mode,
                "output_schema": self.output_schema.to_payload(),
                "timeout_seconds": self.timeout_seconds,
                "source_table": self.source_table,
                "source_row": self.source_row}

    @classmethod
    def from_payload(cls, payload: dict) -> "SubtaskSpec":
        inputs = {k: BlobRef.from_payload(v["blob"]) if "blob" in v
                  else v["value"] for k, v in payload["inputs"].items()}
        preset = payload["preset"]
        return cls(payload["spec_id"], payload["task_id"],
                   payload["instruction"], inputs, preset["name"],
                   preset["prompt"], tuple(preset["capabilities"]),
                   payload["mode"],
                   Schema.from_payload(payload["output_schema"]),
                   payload["timeout_seconds"], payload["source_table"],
                   payload["source_row"])


def _inline_text(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False)
    return str(value)


def _attachment_marker(name: str, ref: BlobRef) -> str:
    return f"[attachment {name}: blob {ref.id[:12]}… ({ref.size} bytes)]"


def expand(template: SubtaskTemplate, preset: AgentPreset, task_id: str,
           spec_id: str, blobs, record: Record | None = None,
           source_table: str | None = None,
           inline_threshold: int = INLINE_THRESHOLD) -> SubtaskSpec:
    """Resolve one template against one source row (or none).

    ``blobs`` is needed to spill oversized scalars; ``record`` is
    present iff the template has a data source.
    """
    inputs: dict[str, Any] = {}
    substitutions: dict[str, str] = {}
    for name, binding in template.bindings.items():
        if "literal" in binding:
            value = binding["literal"]
        else:
            value = record.values.get(binding["column"])
        if isinstance(value, BlobRef):
            inputs[name] = value
            substitutions[name] = _attachment_marker(name, value)
            continue
        if value is None:
            inputs[name] = None
            substitutions[name] = ""
            continue
        text = _inline_text(value)
        if len(text.encode("utf-8")) > inline_threshold:
            ref = blobs.put(text.encode("utf-8"), hint=f"input/{name}")
            inputs[name] = ref
            substitutions[name] = _attachment_marker(name, ref)
        else:
            inputs[name] = value
            substitutions[name] = text

    instruction = template.instruction
    for name in placeholders_in(template.instruction):
        instruction = instruction.replace(f"{{{{{name}}}}}",
                                          substitutions[name])
    return SubtaskSpec(
        spec_id=spec_id, task_id=task_id, instruction=instruction,
        inputs=inputs, preset_name=preset.name,
        preset_prompt=preset.system_prompt,
        preset_capabilities=preset.capability_ids, mode=template.mode,
        output_schema=template.output_schema,
        timeout_seconds=template.timeout_seconds,
        source_table=source_table,
        source_row=record.row_id if record is not None else None)
