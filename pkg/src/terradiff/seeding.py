"""Deterministic seed substreams.

Every random decision in the toolkit flows from one root seed through
named substreams, so that independent stages (dataset split, per-level
training, per-tile generation) stay reproducible and uncorrelated.
"""

from __future__ import annotations

import hashlib


def substream(root: int, name: str) -> int:
    """Derive a 63-bit seed for ``name`` from the root seed."""
    digest = hashlib.blake2s(f"{root}:{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def tile_seed(root: int, tile_id: str) -> int:
    """Per-tile generation seed; stable across runs and report modes."""
    return substream(root, f"tile:{tile_id}")
