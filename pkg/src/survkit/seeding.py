"""Stable labeled seed derivation.

All randomness flows from one master seed; submodule seeds are derived by
hashing a label string, so adding a model family or reordering work never
shifts another component's random stream.
"""

from __future__ import annotations

import hashlib

__all__ = ["derive_seed"]


def derive_seed(master: int, label: str) -> int:
    """Deterministic 63-bit seed for (master seed, label)."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
