"""Small shared helpers: seed derivation, config hashing, timestamps."""

from __future__ import annotations

import datetime
import hashlib

__all__ = ["derive_seed", "config_hash", "now_iso"]


def derive_seed(*parts) -> int:
    """Stable 64-bit seed derived from any printable parts."""
    h = hashlib.blake2b("|".join(str(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def config_hash(mapping: dict) -> str:
    """Short stable digest of a flat key=value mapping."""
    lines = "\n".join(f"{k}={mapping[k]}" for k in sorted(mapping))
    return hashlib.blake2b(lines.encode(), digest_size=8).hexdigest()


def now_iso() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
