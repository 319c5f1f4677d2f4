"""fanout: a parallel agent workflow engine.

A single manager decomposes a task over immutable, lineage-tracked data
tables and fans batches of templated subtasks out to workers; a
slot-aware executor runs them with bounded retries and collects results
into new tables.  Model access goes through a pluggable gateway, so the
whole engine runs deterministically under scripted backends.
"""

__version__ = "0.1.0"
