"""Per-attempt filesystem workspace with path confinement."""

from __future__ import annotations

import shutil
from pathlib import Path

from ..errors import WorkspaceEscape

# Where the leader must leave its answer: one structured record, JSON.
OUTPUT_RELPATH = "output/result.json"
INPUTS_DIR = "inputs"
ARTIFACTS_DIR = "artifacts"


class Workspace:
    """A directory the sandbox may touch; nothing outside it resolves.

    Every path a tool hands over goes through ``resolve``, so escapes by
    ``..`` segments, absolute paths, or symlinks pointing outside the
    root all fail the same way.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)

    def resolve(self, relative: str | Path) -> Path:
        candidate = Path(relative)
        if candidate.is_absolute():
            raise WorkspaceEscape(f"absolute path {str(candidate)!r} is not "
                                  f"inside the workspace")
        resolved = (self.root / candidate).resolve()
        if resolved != self.root and self.root not in resolved.parents:
            raise WorkspaceEscape(f"path {str(relative)!r} escapes the "
                                  f"workspace")
        return resolved

    def write_bytes(self, relative: str, data: bytes) -> Path:
        path = self.resolve(relative)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        return path

    def read_bytes(self, relative: str) -> bytes:
        return self.resolve(relative).read_bytes()

    def output_path(self) -> Path:
        return self.root / OUTPUT_RELPATH

    def destroy(self) -> None:
        shutil.rmtree(self.root, ignore_errors=True)
