"""Shared exception hierarchy.

Every error raised by this package derives from FanoutError.  Errors that a
retry can plausibly cure carry ``transient = True``; the executor consults
that flag when deciding whether a failed attempt gets another one.
"""

from __future__ import annotations


class FanoutError(Exception):
    """Base class for all errors raised by fanout."""

    transient = False


# --- tables ---------------------------------------------------------------

class TableError(FanoutError):
    pass


class SchemaViolation(TableError):
    """A record does not conform to its table schema."""


class IncompatibleSchema(TableError):
    """Dependencies of an operator do not line up (union, join, ...)."""


class UnknownTable(TableError):
    pass


class UnknownField(TableError):
    pass


class UnknownRow(TableError):
    pass


class NameCollision(TableError):
    """A display name is already taken by a live table."""


class PredicateError(TableError):
    """Malformed predicate, or a comparator applied to an unsuitable field."""


class LineageCycle(TableError):
    """An edge that would close a cycle in the lineage DAG."""


class UnrecoverableLineage(TableError):
    """Replay reached a leaf whose source blob is gone; names the blob."""


class DigestBudgetError(TableError):
    """Digest byte budget below the documented minimum, or unmeetable."""


# --- blobs ----------------------------------------------------------------

class BlobError(FanoutError):
    pass


class BlobNotFound(BlobError):
    pass


class BlobIntegrityError(BlobError):
    """Stored bytes no longer hash to the requested content id."""


class ProxyUnreachable(BlobError):
    """The node blob proxy did not answer."""

    transient = True


# --- task state -----------------------------------------------------------

class StateError(FanoutError):
    pass


class UnknownEntity(StateError):
    pass


class InvalidTransition(StateError):
    """Entity status change outside the allowed forward-only order."""


class DuplicateCheckpoint(StateError):
    pass


class NoCheckpoint(StateError):
    pass


class IntegrityViolation(StateError):
    """A record references an entity that does not exist."""


# --- registry -------------------------------------------------------------

class RegistryError(FanoutError):
    pass


class UnknownCapability(RegistryError):
    pass


class UnknownPreset(RegistryError):
    pass


# --- gateway --------------------------------------------------------------

class GatewayError(FanoutError):
    pass


class TransportFault(GatewayError):
    transient = True


class BackendUnavailable(GatewayError):
    transient = True


class TokenBudgetExceeded(GatewayError):
    """Request would exceed the caller-supplied token budget."""


class MalformedRequest(GatewayError):
    pass


class SchemaValidationFailure(GatewayError):
    """Structured output still invalid after the re-ask allowance."""


class ScriptGap(GatewayError):
    """The scripted backend had no rule for a request; the fixture is
    incomplete.  Deliberately not transient: retrying cannot help."""


class UnknownScope(GatewayError):
    """Usage report requested for a scope that never recorded anything."""


# --- fabric / worker ------------------------------------------------------

class FabricError(FanoutError):
    pass


class StagingError(FabricError):
    pass


class AttemptTimeout(FabricError):
    transient = True


class SandboxStartFailure(FabricError):
    transient = True


class StepBudgetExceeded(FabricError):
    """Leader loop ran out of steps without writing output."""


class WorkerFailure(FabricError):
    """The worker itself declared the subtask failed."""


class TopologyViolation(FabricError):
    """Helper-to-helper message, or some other forbidden route."""


class WorkspaceEscape(FabricError):
    """Path that resolves outside the sandbox workspace."""


class OutputMissing(FabricError):
    """Full-agent run finished without writing the output file."""


# --- manager / ops --------------------------------------------------------

class ManagerError(FanoutError):
    pass


class PlanError(ManagerError):
    """Plan replacement that regresses a step status, or malformed plan."""


class ContractError(ManagerError):
    pass


class ContextBudgetError(ManagerError):
    """Rendered context cannot fit the budget even after elision."""


class ToolError(ManagerError):
    """Tool call rejected: unknown tool, bad arguments, or a domain error.

    Rendered back to the model as an error tool-result, never raised through
    the round loop.
    """


class ConfigError(FanoutError):
    pass


class TaskFailed(FanoutError):
    """Task ended without satisfying its output contract."""
