"""Deterministic identifier helpers.

Derived row ids must be stable across re-materializations, so they are
hashes of their inputs rather than counters or random tokens.  Parts are
length-prefixed before hashing to keep the mapping injective.
"""

from __future__ import annotations

import hashlib

ROW_ID_HEX = 16


def derived_row_id(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        raw = part.encode("utf-8")
        h.update(str(len(raw)).encode("ascii"))
        h.update(b":")
        h.update(raw)
    return h.hexdigest()[:ROW_ID_HEX]


def content_id(data: bytes) -> str:
    """Lowercase hex sha256 of the raw bytes."""
    return hashlib.sha256(data).hexdigest()
