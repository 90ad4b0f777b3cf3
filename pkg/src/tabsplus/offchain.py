"""Content-addressed off-chain blob store.

Large payloads stay off the ledger; only their hex digest goes on-chain.
Every ``get`` recomputes the digest of the stored bytes, so any tampering
with the store is detected at read time.
"""

from __future__ import annotations

from pathlib import Path

from .canon import sha256_hex
from .errors import IntegrityMismatch, NotFound


class OffchainStore:
    """In-memory store with optional directory persistence (one file per
    blob, named by digest)."""

    def __init__(self, root: str | Path | None = None):
        self._blobs: dict[str, bytes] = {}
        self._root = Path(root) if root is not None else None
        if self._root is not None:
            self._root.mkdir(parents=True, exist_ok=True)
            for entry in self._root.iterdir():
                if entry.is_file():
                    self._blobs[entry.name] = entry.read_bytes()

    def put(self, blob: bytes) -> str:
        digest = sha256_hex(blob)
        self._blobs[digest] = blob
        if self._root is not None:
            (self._root / digest).write_bytes(blob)
        return digest

    def get(self, digest: str) -> bytes:
        try:
            blob = self._blobs[digest]
        except KeyError:
            raise NotFound(f"no blob stored under {digest}") from None
        actual = sha256_hex(blob)
        if actual != digest:
            raise IntegrityMismatch(
                f"blob under {digest} hashes to {actual}",
                detail={"expected": digest, "actual": actual},
            )
        return blob

    def has(self, digest: str) -> bool:
        return digest in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)

    # test hook: the only sanctioned way to corrupt a stored blob
    def tamper(self, digest: str, blob: bytes) -> None:
        if digest not in self._blobs:
            raise NotFound(f"no blob stored under {digest}")
        self._blobs[digest] = blob
        if self._root is not None:
            (self._root / digest).write_bytes(blob)


__all__ = ["OffchainStore"]
