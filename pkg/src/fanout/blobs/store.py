"""Content-addressed blob store.

Bytes are addressed by their lowercase-hex sha256.  The same bytes always
map to the same id, so writes are idempotent and storage deduplicates for
free.  Files land in a two-level directory tree sharded on the digest
prefix (``ab/cd/abcd...``) to keep directories small.  Every read hashes
what came back off disk and refuses to return bytes that no longer match
their id.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import BlobIntegrityError, BlobNotFound
from ..ids import content_id


@dataclass(frozen=True)
class BlobRef:
    """Pointer to stored bytes; identity is the content id plus size."""

    id: str
    size: int
    hint: str | None = field(default=None, compare=False)

    def to_payload(self) -> list:
        return [self.id, self.size, self.hint]

    @classmethod
    def from_payload(cls, payload) -> "BlobRef":
        return cls(payload[0], int(payload[1]), payload[2])


class BlobStore:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, blob_id: str) -> Path:
        if len(blob_id) != 64 or any(c not in "0123456789abcdef" for c in blob_id):
            raise BlobNotFound(f"malformed content id {blob_id!r}")
        return self.root / blob_id[:2] / blob_id[2:4] / blob_id

    def put(self, data: bytes, hint: str | None = None) -> BlobRef:
        blob_id = content_id(data)
        path = self._path(blob_id)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            # Write-then-rename so a concurrent reader never sees a torn file.
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".put-")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
        return BlobRef(blob_id, len(data), hint)

    def get(self, ref: BlobRef | str) -> bytes:
        blob_id = ref.id if isinstance(ref, BlobRef) else ref
        path = self._path(blob_id)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise BlobNotFound(f"no blob {blob_id}") from None
        actual = content_id(data)
        if actual != blob_id:
            raise BlobIntegrityError(
                f"blob {blob_id} read back with digest {actual}; stored bytes are corrupt"
            )
        return data

    def has(self, ref: BlobRef | str) -> bool:
        blob_id = ref.id if isinstance(ref, BlobRef) else ref
        return self._path(blob_id).exists()

    def delete(self, ref: BlobRef | str) -> None:
        blob_id = ref.id if isinstance(ref, BlobRef) else ref
        try:
            self._path(blob_id).unlink()
        except FileNotFoundError:
            raise BlobNotFound(f"no blob {blob_id}") from None

    def count(self) -> int:
        return sum(1 for _ in self.root.glob("??/??/*"))
