"""Operator console for the runtime.

Every command reads ``--config`` and exits with a documented code when it
fails:

    0   success
    2   usage error (bad flags, missing files named on the command line)
    3   invalid or missing config, or a malformed benchmark/fixture file
    4   unknown task, table, subtask, artifact, or checkpoint
    5   task failed (round budget exhausted or unrecoverable errors)
    6   scripted backend had no rule for a request it received
    7   any other runtime fault

Output is JSON for commands that produce a single result (`ingest`,
`submit`, `score`, `replay`, `serve --check`) and line-oriented text for
the inspection commands (`status`, `tables`, `subtasks`, `artifacts`).
"""

from __future__ import annotations

import json
import sys
import time
from contextlib import contextmanager

import click

from .config import RuntimeConfig
from .errors import (BlobNotFound, ConfigError, FanoutError, NoCheckpoint,
                     ScriptGap, TaskFailed, UnknownCapability, UnknownEntity,
                     UnknownPreset, UnknownTable)
from .runtime import Runtime

EXIT_CONFIG = 3
EXIT_UNKNOWN = 4
EXIT_TASK_FAILED = 5
EXIT_SCRIPT_GAP = 6
EXIT_FAULT = 7

_NOT_FOUND = (UnknownTable, UnknownEntity, NoCheckpoint, BlobNotFound,
              UnknownPreset, UnknownCapability)


def exit_code_for(err: FanoutError) -> int:
    """Map an error to the exit code documented in the module help."""
    if isinstance(err, ConfigError):
        return EXIT_CONFIG
    if isinstance(err, _NOT_FOUND):
        return EXIT_UNKNOWN
    if isinstance(err, TaskFailed):
        return EXIT_TASK_FAILED
    if isinstance(err, ScriptGap):
        return EXIT_SCRIPT_GAP
    return EXIT_FAULT


def _fail(err: FanoutError) -> None:
    click.echo(f"error: {err}", err=True)
    sys.exit(exit_code_for(err))


@contextmanager
def _runtime(config_path: str):
    try:
        runtime = Runtime(RuntimeConfig.from_file(config_path))
    except FanoutError as err:
        _fail(err)
    try:
        yield runtime
    except FanoutError as err:
        _fail(err)
    finally:
        runtime.close()


def _config_option(fn):
    return click.option("-c", "--config", "config_path", required=True,
                        metavar="FILE", help="Runtime config file.")(fn)


def _echo_json(payload) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))


@click.group()
def main() -> None:
    """Operate the task runtime: ingest data, run tasks, inspect state."""


@main.command()
@_config_option
@click.option("--check", is_flag=True,
              help="Validate the config, print the topology, and exit.")
def serve(config_path: str, check: bool) -> None:
    """Start the runtime and hold it open until interrupted."""
    with _runtime(config_path) as runtime:
        config = runtime.config
        _echo_json({
            "root": str(config.root),
            "nodes": config.nodes,
            "llm_slots": config.llm_slots,
            "backend": "scripted" if config.script_path else "remote",
            "capabilities": len(runtime.registry.list_capabilities()),
            "tasks": len(runtime.state.list_tasks(page_size=1000)),
        })
        if check:
            return
        click.echo("serving; interrupt to stop", err=True)
        try:
            while True:
                time.sleep(1)
        except KeyboardInterrupt:
            click.echo("stopped", err=True)


@main.command()
@_config_option
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@click.option("--name", required=True, help="Table name for the ingested rows.")
@click.option("--id-field", default=None,
              help="Column holding stable row ids; defaults to positional ids.")
def ingest(config_path: str, data: str, name: str, id_field: str | None) -> None:
    """Load a JSONL or delimited file into a leaf-table manifest."""
    with _runtime(config_path) as runtime:
        _echo_json(runtime.ingest(data, name, id_field=id_field))


@main.command()
@_config_option
@click.argument("task_id")
@click.argument("query", required=False)
@click.option("--input", "inputs", multiple=True, metavar="MANIFEST_ID",
              help="Manifest blob id from `ingest`; repeatable.")
@click.option("--resume", is_flag=True,
              help="Continue TASK_ID from its latest checkpoint instead of "
                   "registering a new task.")
def submit(config_path: str, task_id: str, query: str | None,
           inputs: tuple[str, ...], resume: bool) -> None:
    """Register a task and run it to completion or failure."""
    with _runtime(config_path) as runtime:
        if resume:
            final = runtime.resume(task_id)
        else:
            if query is None:
                raise click.UsageError("QUERY is required unless --resume is set")
            final = runtime.submit(task_id, query, inputs)
        _echo_json(final)


@main.command()
@_config_option
@click.argument("task_id")
@click.option("--after", default=0, show_default=True,
              help="Print only events with sequence numbers above this.")
@click.option("--tail", default=None, type=int, metavar="N",
              help="Print only the last N events.")
def status(config_path: str, task_id: str, after: int, tail: int | None) -> None:
    """Show a task record and tail its event log."""
    with _runtime(config_path) as runtime:
        task = runtime.state.get_task(task_id)
        click.echo(f"task {task.task_id}: {task.status}  query={task.query!r}")
        events = runtime.state.read_events(task_id, after_seq=after)
        if tail is not None:
            events = events[-tail:]
        for event in events:
            payload = json.dumps(event.payload, sort_keys=True, default=str)
            click.echo(f"{event.seq:>5}  {event.kind:<20} {payload}")


@main.command()
@_config_option
@click.argument("task_id")
@click.option("--table", "table_ref", default=None,
              help="Show schema and rows for one table (name or id).")
@click.option("--limit", default=10, show_default=True,
              help="Row cap when printing a single table.")
@click.option("--include-archived", is_flag=True)
def tables(config_path: str, task_id: str, table_ref: str | None,
           limit: int, include_archived: bool) -> None:
    """List the tables recorded at the task's latest checkpoint."""
    with _runtime(config_path) as runtime:
        catalog = runtime.catalog_of(task_id)
        if table_ref is not None:
            entry = catalog.resolve(table_ref)
            rows = [{"row_id": r.row_id, "values": r.values}
                    for r in catalog.records(entry.table_id)[:limit]]
            _echo_json({"id": entry.table_id, "name": entry.name,
                        "kind": entry.kind, "rows": entry.row_count,
                        "schema": entry.schema.to_payload(), "sample": rows})
            return
        for entry in catalog.list_tables(include_archived=include_archived):
            flag = "  archived" if entry.archived else ""
            click.echo(f"{entry.table_id}  {entry.name:<28} {entry.kind:<8} "
                       f"{entry.row_count:>6} rows{flag}")


@main.command()
@_config_option
@click.argument("task_id")
@click.option("--batch", default=None, help="Only specs in this batch.")
@click.option("--status", "status_filter", default=None,
              help="Only runs with this status.")
@click.option("--spec", default=None, help="Show one subtask run in full.")
def subtasks(config_path: str, task_id: str, batch: str | None,
             status_filter: str | None, spec: str | None) -> None:
    """List subtask runs recorded for a task."""
    with _runtime(config_path) as runtime:
        if spec is not None:
            _echo_json(runtime.state.get_subtask_result(task_id, spec))
            return
        page = runtime.state.list_subtasks(task_id, status=status_filter,
                                           page_size=10_000)
        items = page["items"]
        if batch is not None:
            items = [run for run in items
                     if run.spec_id.startswith(batch + "-")]
        for run in items:
            suffix = f"  error={run.error}" if run.error else ""
            click.echo(f"{run.spec_id}  {run.status:<9} "
                       f"attempts={run.attempts}{suffix}")
        click.echo(f"{len(items)} of {page['total']} subtask runs")


@main.command()
@_config_option
@click.argument("task_id")
@click.option("--subtask", default=None, help="Only artifacts from this subtask.")
@click.option("--artifact", "artifact_id", default=None,
              help="Print one artifact's content to stdout.")
def artifacts(config_path: str, task_id: str, subtask: str | None,
              artifact_id: str | None) -> None:
    """List artifacts captured from worker runs."""
    with _runtime(config_path) as runtime:
        if artifact_id is not None:
            record = runtime.state.get_artifact(task_id, artifact_id)
            content = runtime.blobs.get(record.blob)
            click.echo(content.decode("utf-8", errors="replace"), nl=False)
            return
        page = runtime.state.list_artifacts(task_id, page_size=10_000)
        items = page["items"]
        if subtask is not None:
            items = [rec for rec in items if rec.subtask_id == subtask]
        for rec in items:
            click.echo(f"{rec.artifact_id}  {rec.subtask_id}  "
                       f"{rec.name} ({rec.media_hint})")
        click.echo(f"{len(items)} of {page['total']} artifacts")


@main.command()
@_config_option
@click.argument("task_id")
@click.argument("benchmark")
def score(config_path: str, task_id: str, benchmark: str) -> None:
    """Score a task's output tables against a benchmark contract file."""
    with _runtime(config_path) as runtime:
        _echo_json(runtime.score(task_id, benchmark))


@main.command()
@_config_option
@click.argument("task_id")
@click.argument("table")
def replay(config_path: str, task_id: str, table: str) -> None:
    """Re-materialize a table from lineage and print its content id."""
    with _runtime(config_path) as runtime:
        _echo_json(runtime.replay(task_id, table))


if __name__ == "__main__":
    main()
