"""Elevation grids, per-tile normalization, and the binary tile store."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataValidationError, UnsupportedFormatError

TILE_MAGIC = b"TDN1"
_HEADER = struct.Struct("<4sIIff")


@dataclass(frozen=True)
class NormMeta:
    """Affine map that took a tile from meters to [-1, 1].

    ``range_elev == 0`` marks a constant (degenerate) tile, which
    normalizes to all zeros.
    """

    min_elev: float
    range_elev: float
    degenerate: bool = False

    def __post_init__(self):
        if self.range_elev < 0:
            raise DataValidationError(f"range_elev must be >= 0, got {self.range_elev}")
        if (self.range_elev == 0) != self.degenerate:
            raise DataValidationError("range_elev == 0 must coincide with the degenerate flag")


@dataclass
class HeightMap:
    """Single-channel elevation grid.

    ``values`` is a 2-D float array in meters, or in [-1, 1] when ``norm``
    is set. ``cell_scale`` (meters per cell) is informational only.
    """

    values: np.ndarray
    cell_scale: float = 1.0
    norm: NormMeta | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise DataValidationError(f"expected a non-empty 2-D grid, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataValidationError("elevation grid contains NaN or Inf")
        if self.norm is not None:
            lo, hi = self.values.min(), self.values.max()
            if lo < -1.0 - 1e-9 or hi > 1.0 + 1e-9:
                raise DataValidationError(f"normalized values outside [-1, 1]: [{lo}, {hi}]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def negated(self) -> "HeightMap":
        """Upside-down copy (used for ridge/basin duality)."""
        return HeightMap(-self.values, cell_scale=self.cell_scale)


def normalize(tile: HeightMap) -> HeightMap:
    """Map a tile affinely to [-1, 1], recording the inverse in NormMeta.

    Constant tiles map to all zeros with the degenerate flag set.
    """
    if tile.norm is not None:
        raise DataValidationError("tile is already normalized")
    mn = float(tile.values.min())
    mx = float(tile.values.max())
    rng = mx - mn
    if rng == 0.0:
        return HeightMap(
            np.zeros_like(tile.values),
            cell_scale=tile.cell_scale,
            norm=NormMeta(mn, 0.0, degenerate=True),
        )
    scaled = 2.0 * (tile.values - mn) / rng - 1.0
    return HeightMap(scaled, cell_scale=tile.cell_scale, norm=NormMeta(mn, rng))


def denormalize(tile: HeightMap) -> HeightMap:
    """Invert :func:`normalize` using the tile's NormMeta."""
    if tile.norm is None:
        raise DataValidationError("tile has no normalization metadata")
    meta = tile.norm
    if meta.degenerate:
        values = np.full_like(tile.values, meta.min_elev)
    else:
        values = (tile.values + 1.0) * 0.5 * meta.range_elev + meta.min_elev
    return HeightMap(values, cell_scale=tile.cell_scale)


def write_tile(path: str | Path, tile: HeightMap) -> None:
    """Persist a normalized tile: TDN1 header + row-major little-endian f32."""
    if tile.norm is None:
        raise DataValidationError("tile store holds normalized tiles; call normalize() first")
    path = Path(path)
    header = _HEADER.pack(
        TILE_MAGIC, tile.width, tile.height, tile.norm.min_elev, tile.norm.range_elev
    )
    body = np.ascontiguousarray(tile.values, dtype="<f4").tobytes()
    path.write_bytes(header + body)


def read_tile(path: str | Path) -> HeightMap:
    """Read a tile written by :func:`write_tile`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise UnsupportedFormatError(f"{path}: truncated tile file")
    magic, width, height, min_elev, range_elev = _HEADER.unpack_from(raw)
    if magic != TILE_MAGIC:
        raise UnsupportedFormatError(f"{path}: bad magic {magic!r}, expected {TILE_MAGIC!r}")
    expected = _HEADER.size + 4 * width * height
    if len(raw) != expected:
        raise UnsupportedFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(height, width)
    meta = NormMeta(float(min_elev), float(range_elev), degenerate=range_elev == 0.0)
    return HeightMap(values.astype(np.float64), norm=meta)


def with_values(tile: HeightMap, values: np.ndarray) -> HeightMap:
    """Copy of ``tile`` with new values and no normalization metadata."""
    return replace(tile, values=values, norm=None)
