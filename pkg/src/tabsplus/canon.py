"""Canonical JSON: the single serialization used for every artifact we hash,
persist, or compare byte-for-byte. Keys sorted, compact separators, UTF-8."""

from __future__ import annotations

import hashlib
import json


def canonical_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def canonical_bytes(obj: object) -> bytes:
    return canonical_json(obj).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_of(obj: object) -> str:
    """Hex digest of an object's canonical serialization."""
    return sha256_hex(canonical_bytes(obj))
