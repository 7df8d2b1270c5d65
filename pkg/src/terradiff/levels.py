"""Cascade level names and their latent geometry for 144x144 tiles."""

from __future__ import annotations

from .errors import DataValidationError

LEVELS = ("structural", "intermediate", "fine")
LEVEL_SIZES = {"structural": 9, "intermediate": 18, "fine": 36}
POOL_FACTORS = {"structural": 4, "intermediate": 2, "fine": 1}
DEFAULT_BUDGETS = {"structural": 16, "intermediate": 10, "fine": 10}
LATENT_CHANNELS = 4
TILE_SIZE = 144


def check_level(level: str) -> str:
    if level not in LEVELS:
        raise DataValidationError(f"unknown level {level!r}, expected one of {LEVELS}")
    return level


def coarser(level: str) -> str | None:
    """The next-coarser level, or None for the structural level."""
    idx = LEVELS.index(check_level(level))
    return LEVELS[idx - 1] if idx > 0 else None
