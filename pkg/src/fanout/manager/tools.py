"""The manager's tool suite: one handler per tool, dispatch by name.

Every handler is model-facing: errors come back as tool-error text for
the transcript, never as exceptions out of ``dispatch``.  Results are
rendered to JSON and truncated to a per-tool byte budget before they
reach the model, so one careless preview cannot flood the context.
"""

from __future__ import annotations

import inspect
import json
from typing import Any, Sequence

from ..blobs import BlobRef
from ..errors import StagingError, ToolError
from ..fabric.template import FULL_AGENT, LLM_ONLY, MODES, SubtaskTemplate
from ..gateway import ToolSignature
from ..tables.schema import Schema
from .plan import (OutputContract, Plan, PlanStep, TableSpec, check_contract,
                   replace_plan)

DEFAULT_TOOL_BUDGET = 4096
ARTIFACT_EXCERPT_BUDGET = 2048

# Tools whose natural output earns a bigger slice of transcript.
TOOL_BUDGETS = {
    "preview_rows": 8192,
    "filter_rows": 8192,
    "get_table_meta": 8192,
    "sample_rows": 8192,
    "get_subtask_result": 8192,
    "get_artifact": 8192,
}


def _jsonable(value: Any) -> Any:
    if isinstance(value, BlobRef):
        return value.to_payload()
    if isinstance(value, Schema):
        return value.to_payload()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class ToolSuite:
    """Binds the manager's model to every other subsystem, per task."""

    def __init__(self, task_id: str, catalog, analytics, fabric, state,
                 presets, tool_budgets: dict[str, int] | None = None,
                 default_budget: int = DEFAULT_TOOL_BUDGET,
                 excerpt_budget: int = ARTIFACT_EXCERPT_BUDGET) -> None:
        self.task_id = task_id
        self.catalog = catalog
        self.analytics = analytics
        self.fabric = fabric
        self.state = state
        self.presets = presets
        self.budgets = dict(TOOL_BUDGETS)
        self.budgets.update(tool_budgets or {})
        self.default_budget = default_budget
        self.excerpt_budget = excerpt_budget
        self.plan: Plan | None = None
        self.contract: OutputContract = OutputContract()
        self._handlers = {name: getattr(self, name) for name in TOOL_NAMES}

    # --- dispatch ---------------------------------------------------------

    def dispatch(self, name: str, arguments: dict) -> dict:
        """Returns {"ok": bool, "content": str}; never raises."""
        handler = self._handlers.get(name)
        if handler is None:
            return {"ok": False,
                    "content": f"tool error: no tool named {name!r}"}
        try:
            inspect.signature(handler).bind(**dict(arguments or {}))
        except TypeError as err:
            return {"ok": False,
                    "content": f"tool error: {name}: bad arguments: {err}"}
        try:
            result = handler(**dict(arguments or {}))
        except Exception as err:
            return {"ok": False,
                    "content": f"tool error: {name}: "
                               f"{type(err).__name__}: {err}"}
        rendered = json.dumps(_jsonable(result), sort_keys=True,
                              ensure_ascii=False)
        budget = self.budgets.get(name, self.default_budget)
        if len(rendered.encode("utf-8")) > budget:
            clipped = rendered.encode("utf-8")[:budget].decode("utf-8", "ignore")
            dropped = len(rendered.encode("utf-8")) - budget
            rendered = clipped + f" ...[truncated {dropped} bytes]"
        return {"ok": True, "content": rendered}

    def signatures(self) -> tuple[ToolSignature, ...]:
        return tuple(ToolSignature(name, desc, params)
                     for name, desc, params in TOOL_TABLE)

    # --- inspection -------------------------------------------------------

    def list_tables(self) -> dict:
        grouped: dict[str, list] = {}
        for entry in self.catalog.list_tables():
            grouped.setdefault(entry.kind, []).append(
                {"id": entry.table_id, "name": entry.name,
                 "rows": entry.row_count})
        return grouped

    def get_table_meta(self, table: str, view: str = "full") -> dict:
        entry = self.catalog.resolve(table)
        if view == "summary":
            return {"id": entry.table_id, "name": entry.name,
                    "kind": entry.kind, "rows": entry.row_count,
                    "columns": list(entry.schema.names())}
        if view != "full":
            raise ToolError(f"view must be 'full' or 'summary', got {view!r}")
        return {"id": entry.table_id, "name": entry.name, "kind": entry.kind,
                "rows": entry.row_count, "schema": entry.schema.to_payload(),
                "archived": entry.archived,
                "lineage": entry.lineage.to_payload()}

    def preview_rows(self, table: str, page: int = 1, page_size: int = 10,
                     columns: Sequence[str] | None = None) -> dict:
        return self.analytics.preview_rows(table, page, page_size, columns)

    def get_row(self, table: str, row_id: str,
                columns: Sequence[str] | None = None) -> dict:
        return self.analytics.get_row(table, row_id, columns)

    def filter_rows(self, table: str, predicate: dict, page: int = 1,
                    page_size: int = 10,
                    columns: Sequence[str] | None = None) -> dict:
        return self.analytics.filter_rows(table, predicate, page, page_size,
                                          columns)

    # --- analytics --------------------------------------------------------

    def distinct_values(self, table: str, field: str, predicate: dict = None,
                        page: int = 1, page_size: int = 20) -> dict:
        return self.analytics.distinct_values(table, field, predicate, page,
                                              page_size)

    def value_counts(self, table: str, field: str, k: int = 10,
                     predicate: dict = None) -> dict:
        return self.analytics.value_counts(table, field, k, predicate)

    def summarize_numeric(self, table: str, fields: Sequence[str],
                          predicate: dict = None) -> dict:
        return self.analytics.summarize_numeric(table, fields, predicate)

    def groupby_aggregate(self, table: str, keys: Sequence[str],
                          aggregations: Any, predicate: dict = None,
                          page: int = 1, page_size: int = 50) -> dict:
        return self.analytics.groupby_aggregate(table, keys, aggregations,
                                                predicate, page, page_size)

    def sample_rows(self, table: str, n: int, seed: int = 0,
                    columns: Sequence[str] | None = None) -> dict:
        return self.analytics.sample_rows(table, n, seed, columns)

    # --- manipulation -----------------------------------------------------

    def _ids(self, tables: Sequence[str]) -> list[str]:
        return [self.catalog.resolve(t).table_id for t in tables]

    def _derived(self, entry) -> dict:
        return {"id": entry.table_id, "name": entry.name,
                "rows": entry.row_count,
                "columns": list(entry.schema.names())}

    def create_union_table(self, tables: Sequence[str], name: str) -> dict:
        return self._derived(self.catalog.derive(
            "union", {}, self._ids(tables), name))

    def create_filtered_table(self, table: str, predicate: dict,
                              name: str) -> dict:
        return self._derived(self.catalog.derive(
            "filter", {"predicate": predicate}, self._ids([table]), name))

    def create_projected_table(self, table: str, columns: Sequence[str],
                               name: str) -> dict:
        return self._derived(self.catalog.derive(
            "project", {"columns": list(columns)}, self._ids([table]), name))

    def create_joined_table(self, left: str, right: str, on: Sequence,
                            name: str) -> dict:
        return self._derived(self.catalog.derive(
            "join", {"on": list(on)}, self._ids([left, right]), name))

    def create_grouped_table(self, table: str, keys: Sequence[str],
                             aggregations: Sequence, name: str) -> dict:
        aggs = [list(a) if not isinstance(a, dict)
                else [a["name"], a["op"], a.get("field")]
                for a in aggregations]
        return self._derived(self.catalog.derive(
            "group", {"keys": list(keys), "aggregations": aggs},
            self._ids([table]), name))

    def rename_table(self, table: str, new_name: str) -> dict:
        entry = self.catalog.resolve(table)
        return self._derived(self.catalog.rename(entry.table_id, new_name))

    def archive_table(self, table: str) -> dict:
        entry = self.catalog.resolve(table)
        archived = self.catalog.archive(entry.table_id)
        return {"id": archived.table_id, "archived": True}

    def unarchive_table(self, table: str, new_name: str = None) -> dict:
        # archived tables have no live name, so the id is the address
        return self._derived(self.catalog.unarchive(table, new_name))

    def rename_columns(self, table: str, mapping: dict, name: str) -> dict:
        return self._derived(self.catalog.derive(
            "rename_columns", {"mapping": dict(mapping)},
            self._ids([table]), name))

    def add_computed_columns(self, table: str, columns: Sequence[dict],
                             name: str) -> dict:
        return self._derived(self.catalog.derive(
            "add_computed", {"columns": list(columns)},
            self._ids([table]), name))

    def create_results_with_source(self, results_table: str, name: str,
                                   source_table: str = None) -> dict:
        results = self.catalog.resolve(results_table)
        if source_table is None:
            deps = results.lineage.deps
            if len(deps) != 1:
                raise ToolError(
                    f"table {results.name!r} has {len(deps)} lineage "
                    f"dependencies; pass source_table explicitly")
            source_id = deps[0]
        else:
            source_id = self.catalog.resolve(source_table).table_id
        return self._derived(self.catalog.derive(
            "results_with_source", {"source_table": source_id},
            [results.table_id, source_id], name))

    def drop_columns(self, table: str, columns: Sequence[str],
                     name: str) -> dict:
        return self._derived(self.catalog.derive(
            "drop_columns", {"columns": list(columns)},
            self._ids([table]), name))

    # --- subtasks ---------------------------------------------------------

    def _template(self, preset: str, instruction: str, output_schema,
                  bindings: dict | None, data_source: str | None,
                  mode: str | None, timeout_seconds: float) -> SubtaskTemplate:
        resolved = self.presets.get(preset)
        if mode is None:
            mode = LLM_ONLY if not resolved.capability_ids else FULL_AGENT
        if mode not in MODES:
            raise StagingError(f"mode must be one of {MODES}, got {mode!r}")
        return SubtaskTemplate(
            preset, instruction, bindings=dict(bindings or {}),
            data_source=data_source, mode=mode,
            output_schema=Schema.from_payload(output_schema),
            timeout_seconds=timeout_seconds)

    def stage_single_subtask(self, preset: str, instruction: str,
                             output_schema: Sequence, bindings: dict = None,
                             mode: str = None,
                             timeout_seconds: float = 300.0) -> dict:
        entry = self.fabric.stage_single(self._template(
            preset, instruction, output_schema, bindings, None, mode,
            timeout_seconds))
        return {"staged_id": entry.staged_id, "mode": entry.template.mode}

    def stage_dataset_subtask(self, table: str, preset: str, instruction: str,
                              output_schema: Sequence, bindings: dict = None,
                              mode: str = None,
                              timeout_seconds: float = 300.0) -> dict:
        entry = self.fabric.stage_dataset(self._template(
            preset, instruction, output_schema, bindings, None, mode,
            timeout_seconds), table)
        rows = self.catalog.get(entry.source_table).row_count
        return {"staged_id": entry.staged_id, "mode": entry.template.mode,
                "rows": rows}

    def remove_staged_subtask(self, staged_id: str) -> dict:
        self.fabric.remove_staged(staged_id)
        return {"removed": staged_id}

    def clear_staged_subtasks(self) -> dict:
        count = len(self.fabric.list_staged())
        self.fabric.clear_staged()
        return {"cleared": count}

    def list_subtasks(self, status: str = None, page: int = 1,
                      page_size: int = 20) -> dict:
        out = self.state.list_subtasks(self.task_id, status, page, page_size)
        out["items"] = [{"spec_id": r.spec_id, "status": r.status,
                         "attempts": r.attempts, "error": r.error}
                        for r in out["items"]]
        return out

    def get_subtask_result(self, spec_id: str) -> dict:
        detail = self.state.get_subtask_result(self.task_id, spec_id)
        run = detail["run"]
        return {"spec_id": run.spec_id, "status": run.status,
                "attempts": run.attempts, "output": run.output,
                "error": run.error, "metrics": run.metrics,
                "attempt_outcomes": [a.outcome for a in detail["attempts"]],
                "artifact_ids": detail["artifact_ids"]}

    def get_artifact(self, artifact_id: str,
                     include_content: bool = False) -> dict:
        art = self.state.get_artifact(self.task_id, artifact_id)
        out = {"artifact_id": art.artifact_id, "subtask_id": art.subtask_id,
               "name": art.name, "media_hint": art.media_hint,
               "excerpt": art.excerpt, "blob": art.ref.to_payload()}
        if include_content:
            data = self.catalog.blobs.get(art.ref)
            text = data.decode("utf-8", "replace")
            if len(text) > self.excerpt_budget:
                text = text[:self.excerpt_budget] + \
                    f" ...[truncated, {art.ref.size} bytes total]"
            out["content"] = text
        return out

    def list_artifacts(self, subtask: str = None,
                       include_previews: bool = False, page: int = 1,
                       page_size: int = 20) -> dict:
        out = self.state.list_artifacts(self.task_id, page=1,
                                        page_size=10_000)
        items = [a for a in out["items"]
                 if subtask is None or a.subtask_id == subtask]
        total = len(items)
        items = items[(page - 1) * page_size:page * page_size]
        rendered = []
        for art in items:
            row = {"artifact_id": art.artifact_id,
                   "subtask_id": art.subtask_id, "name": art.name,
                   "media_hint": art.media_hint}
            if include_previews:
                row["excerpt"] = art.excerpt
            rendered.append(row)
        return {"page": page, "page_size": page_size, "total": total,
                "items": rendered}

    # --- plan and contract ------------------------------------------------

    def write_plan(self, partition_strategy: str, steps: Sequence) -> dict:
        new = Plan(partition_strategy, tuple(
            PlanStep(s["description"], s.get("status", "pending"))
            if isinstance(s, dict) else PlanStep(*s) for s in steps))
        self.plan = replace_plan(self.plan, new)
        return {"ok": True, "steps": len(new.steps)}

    def write_output_contract(self, tables: Sequence[dict]) -> dict:
        specs = []
        for t in tables:
            schema = t.get("schema")
            specs.append(TableSpec(
                t["name"], Schema.from_payload(schema) if schema else None,
                t.get("row_count")))
        self.contract = OutputContract(tuple(specs))
        return check_contract(self.contract, self.catalog)

    # --- presets ----------------------------------------------------------

    def create_agent_preset(self, name: str, system_prompt: str,
                            capability_ids: Sequence[str] = ()) -> dict:
        preset = self.presets.upsert(name, system_prompt,
                                     tuple(capability_ids))
        return {"name": preset.name,
                "capabilities": list(preset.capability_ids)}

    def list_agent_presets(self) -> dict:
        return {"items": [{"name": p.name, "system_prompt": p.system_prompt,
                           "capabilities": list(p.capability_ids)}
                          for p in self.presets.list()]}

    def delete_agent_preset(self, name: str) -> dict:
        self.presets.delete(name)
        return {"deleted": name}


# (name, description, parameter documentation) for every tool the
# manager's model can call; dispatch routes by the same names.
TOOL_TABLE: tuple[tuple[str, str, dict], ...] = (
    ("list_tables", "List live tables grouped by kind.", {}),
    ("get_table_meta", "Table metadata: full schema/lineage view or a "
     "compact summary.", {"table": "id or name", "view": "full|summary"}),
    ("preview_rows", "Paginated row preview in canonical order.",
     {"table": "id or name", "page": "int", "page_size": "int",
      "columns": "optional list"}),
    ("get_row", "Fetch one row by row id.",
     {"table": "id or name", "row_id": "string",
      "columns": "optional list"}),
    ("filter_rows", "Rows matching a structured predicate.",
     {"table": "id or name", "predicate": "{all: [{field, op, value}, ...]}",
      "page": "int", "page_size": "int", "columns": "optional list"}),
    ("distinct_values", "Distinct values of a field with counts.",
     {"table": "id or name", "field": "string",
      "predicate": "optional {all: [...]} payload", "page": "int",
      "page_size": "int"}),
    ("value_counts", "Top-k most frequent values of a field.",
     {"table": "id or name", "field": "string", "k": "int",
      "predicate": "optional {all: [...]} payload"}),
    ("summarize_numeric", "Count/min/max/mean/stddev for numeric fields.",
     {"table": "id or name", "fields": "list of field names",
      "predicate": "optional {all: [...]} payload"}),
    ("groupby_aggregate", "Grouped aggregation: count, count_distinct, "
     "sum, avg, min, max.",
     {"table": "id or name", "keys": "list", "aggregations":
      "[[out, op, field], ...]", "predicate": "optional {all: [...]} payload",
      "page": "int", "page_size": "int"}),
    ("sample_rows", "Seeded random sample of rows.",
     {"table": "id or name", "n": "int", "seed": "int",
      "columns": "optional list"}),
    ("create_union_table", "Derive a table by concatenating "
     "schema-compatible tables.",
     {"tables": "list of ids or names", "name": "display name"}),
    ("create_filtered_table", "Derive a table of rows matching a predicate.",
     {"table": "id or name", "predicate": "{all: [{field, op, value}, ...]}",
      "name": "display name"}),
    ("create_projected_table", "Derive a table keeping only some columns.",
     {"table": "id or name", "columns": "list", "name": "display name"}),
    ("create_joined_table", "Derive a table joining two tables on key "
     "pairs.", {"left": "id or name", "right": "id or name",
                "on": "list of column names or {left,right} pairs",
                "name": "display name"}),
    ("create_grouped_table", "Derive a table grouping rows with first, "
     "count, or collect aggregations.",
     {"table": "id or name", "keys": "list",
      "aggregations": "[[out, op, field], ...]", "name": "display name"}),
    ("rename_table", "Change a table's display name.",
     {"table": "id or name", "new_name": "string"}),
    ("archive_table", "Hide a table from ordinary listings.",
     {"table": "id or name"}),
    ("unarchive_table", "Restore an archived table.",
     {"table": "table id", "new_name": "optional new display name"}),
    ("rename_columns", "Derive a table with columns renamed.",
     {"table": "id or name", "mapping": "{old: new}",
      "name": "display name"}),
    ("add_computed_columns", "Derive a table adding computed columns "
     "(cast, concat, coalesce, key extraction, first-element).",
     {"table": "id or name", "columns": "list of column specs",
      "name": "display name"}),
    ("create_results_with_source", "Join a results table back to the "
     "source rows its subtasks came from.",
     {"results_table": "id or name", "name": "display name",
      "source_table": "optional; inferred from lineage when single"}),
    ("drop_columns", "Derive a table with some columns removed.",
     {"table": "id or name", "columns": "list", "name": "display name"}),
    ("stage_single_subtask", "Stage one literal subtask.",
     {"preset": "preset name", "instruction": "text",
      "output_schema": "[[name, type, nullable?], ...]",
      "bindings": "optional {placeholder: {literal: value}}",
      "mode": "optional llm-only|full-agent",
      "timeout_seconds": "optional"}),
    ("stage_dataset_subtask", "Stage one subtask per row of a table.",
     {"table": "id or name", "preset": "preset name",
      "instruction": "text with {{placeholders}}",
      "output_schema": "[[name, type, nullable?], ...]",
      "bindings": "{placeholder: {column: c} or {literal: v}}",
      "mode": "optional llm-only|full-agent",
      "timeout_seconds": "optional"}),
    ("remove_staged_subtask", "Remove one staged entry.",
     {"staged_id": "string"}),
    ("clear_staged_subtasks", "Clear the staging area.", {}),
    ("list_subtasks", "Executed subtasks, paginated, optional status "
     "filter.", {"status": "optional", "page": "int", "page_size": "int"}),
    ("get_subtask_result", "Full result detail for one subtask.",
     {"spec_id": "string"}),
    ("get_artifact", "Artifact metadata, optionally with truncated "
     "content.", {"artifact_id": "string", "include_content": "bool"}),
    ("list_artifacts", "Artifacts for this task, optional subtask filter "
     "and previews.", {"subtask": "optional spec id",
                       "include_previews": "bool", "page": "int",
                       "page_size": "int"}),
    ("write_plan", "Replace the plan (partition strategy + steps).",
     {"partition_strategy": "text",
      "steps": "[{description, status}, ...]"}),
    ("write_output_contract", "Replace the output contract; reports "
     "current satisfaction.",
     {"tables": "[{name, schema?, row_count?}, ...]"}),
    ("create_agent_preset", "Create or update an agent preset.",
     {"name": "string", "system_prompt": "text",
      "capability_ids": "list"}),
    ("list_agent_presets", "List agent presets.", {}),
    ("delete_agent_preset", "Delete an agent preset.", {"name": "string"}),
)

TOOL_NAMES = tuple(name for name, _, _ in TOOL_TABLE)
