"""Template staging and parallel batch execution."""

from .executor import (BatchResult, LLM_ONLY_CAP, MAX_ATTEMPTS, StagedEntry,
                       SubtaskFabric, classify_error)
from .template import (FULL_AGENT, INLINE_THRESHOLD, LLM_ONLY, MODES,
                       SubtaskSpec, SubtaskTemplate, expand, placeholders_in,
                       validate_template)

__all__ = [
    "BatchResult",
    "FULL_AGENT",
    "INLINE_THRESHOLD",
    "LLM_ONLY",
    "LLM_ONLY_CAP",
    "MAX_ATTEMPTS",
    "MODES",
    "StagedEntry",
    "SubtaskFabric",
    "SubtaskSpec",
    "SubtaskTemplate",
    "classify_error",
    "expand",
    "placeholders_in",
    "validate_template",
]
