"""Durable task, checkpoint, subtask, artifact, and event storage."""

from .store import (ATTEMPT_OUTCOMES, FAILED, FINAL_STATUSES, FINALIZED,
                    LOGICAL_FAILURE, RUNNING, SUCCESS, TIMEOUT,
                    TRANSIENT_FAILURE, ArtifactRecord, AttemptRecord,
                    Checkpoint, EventRecord, SubtaskRun, TaskRecord,
                    TaskStateStore)

__all__ = ["ATTEMPT_OUTCOMES", "FAILED", "FINAL_STATUSES", "FINALIZED",
           "LOGICAL_FAILURE", "RUNNING", "SUCCESS", "TIMEOUT",
           "TRANSIENT_FAILURE", "ArtifactRecord", "AttemptRecord",
           "Checkpoint", "EventRecord", "SubtaskRun", "TaskRecord",
           "TaskStateStore"]
