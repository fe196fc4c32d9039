"""Stable seed derivation so every artifact replays from one master seed."""

from __future__ import annotations

import hashlib


def stable_seed(*parts) -> int:
    """Platform-independent 63-bit seed derived from hashable parts."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
