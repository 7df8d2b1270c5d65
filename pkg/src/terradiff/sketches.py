"""Derive the four sketch masks (rivers, ridges, basins, peaks) from a tile."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataValidationError
from .heightmap import HeightMap
from .hydrology import fill_pits, flow_accumulation, flow_direction_d8

SKETCH_CHANNELS = ("rivers", "ridges", "basins", "peaks")


@dataclass(frozen=True)
class SketchConfig:
    river_quantile: float = 0.95
    ridge_quantile: float = 0.95
    peak_window: int = 9
    basin_window: int = 9
    prominence_frac: float = 0.02  # of tile relief


@dataclass
class SketchSet:
    """Four aligned binary masks over one tile."""

    rivers: np.ndarray
    ridges: np.ndarray
    basins: np.ndarray
    peaks: np.ndarray

    def __post_init__(self):
        shape = None
        for name in SKETCH_CHANNELS:
            mask = np.asarray(getattr(self, name), dtype=np.uint8)
            setattr(self, name, mask)
            if mask.ndim != 2:
                raise DataValidationError(f"{name} mask must be 2-D, got shape {mask.shape}")
            if shape is None:
                shape = mask.shape
            elif mask.shape != shape:
                raise DataValidationError(f"{name} mask shape {mask.shape} != {shape}")
            if not np.isin(mask, (0, 1)).all():
                raise DataValidationError(f"{name} mask must be binary")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rivers.shape

    def stacked(self) -> np.ndarray:
        """Channel-stacked (4, H, W) array in the fixed channel order."""
        return np.stack([getattr(self, name) for name in SKETCH_CHANNELS])

    @classmethod
    def from_stacked(cls, masks: np.ndarray) -> "SketchSet":
        if masks.shape[0] != len(SKETCH_CHANNELS):
            raise DataValidationError(f"expected {len(SKETCH_CHANNELS)} masks, got {masks.shape[0]}")
        return cls(*[masks[i] for i in range(len(SKETCH_CHANNELS))])


def extract_rivers(acc: np.ndarray, quantile: float = 0.95) -> np.ndarray:
    """Mark cells whose accumulation reaches the given quantile."""
    if not 0.0 < quantile < 1.0:
        raise DataValidationError(f"quantile must lie in (0, 1), got {quantile}")
    threshold = np.quantile(acc, quantile, method="higher")
    return (acc >= threshold).astype(np.uint8)


def drainage_mask(dem: HeightMap, quantile: float = 0.95) -> np.ndarray:
    """Full river pipeline: fill, D8 directions, accumulation, threshold.

    A tile with zero relief has no drainage; the mask is all zeros.
    """
    if dem.values.max() == dem.values.min():
        return np.zeros(dem.values.shape, dtype=np.uint8)
    acc = flow_accumulation(flow_direction_d8(fill_pits(dem)))
    return extract_rivers(acc, quantile)


def extract_ridges(dem: HeightMap, quantile: float = 0.95) -> np.ndarray:
    """Ridges are the rivers of the negated tile."""
    return drainage_mask(dem.negated(), quantile)


def _window_extrema(values: np.ndarray, window: int, min_prominence: float) -> np.ndarray:
    if window < 3 or window % 2 == 0:
        raise DataValidationError(f"window must be odd and >= 3, got {window}")
    footprint = np.ones((window, window), dtype=bool)
    footprint[window // 2, window // 2] = False
    neighbor_max = ndimage.maximum_filter(values, footprint=footprint, mode="constant", cval=-np.inf)
    mask = (values > neighbor_max) & (values - neighbor_max >= min_prominence)
    # Only cells with the full window in-grid are eligible; clipped windows
    # at the border would promote slope edges to spurious extrema.
    half = window // 2
    interior = np.zeros_like(mask)
    if mask.shape[0] > 2 * half and mask.shape[1] > 2 * half:
        interior[half:-half, half:-half] = True
    return (mask & interior).astype(np.uint8)


def extract_peaks(dem: HeightMap, window: int = 9, min_prominence: float = 0.0) -> np.ndarray:
    """Cells that are the strict maximum of their window by >= min_prominence."""
    return _window_extrema(dem.values, window, min_prominence)


def extract_basins(dem: HeightMap, window: int = 9, min_prominence: float = 0.0) -> np.ndarray:
    """Windowed strict minima of the unfilled tile (peaks of the negation)."""
    return _window_extrema(-dem.values, window, min_prominence)


def build_sketchset(dem: HeightMap, cfg: SketchConfig | None = None) -> SketchSet:
    """Deterministic composite of the four extractors for one tile."""
    cfg = cfg or SketchConfig()
    relief = float(dem.values.max() - dem.values.min())
    prominence = cfg.prominence_frac * relief
    return SketchSet(
        rivers=drainage_mask(dem, cfg.river_quantile),
        ridges=extract_ridges(dem, cfg.ridge_quantile),
        basins=extract_basins(dem, cfg.basin_window, prominence),
        peaks=extract_peaks(dem, cfg.peak_window, prominence),
    )


def save_sketchset(prefix: str | Path, sketches: SketchSet) -> Path:
    """Write four 1-bit PNG masks plus a JSON sidecar naming the channels."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in SKETCH_CHANNELS:
        mask = getattr(sketches, name)
        img = Image.fromarray((mask * 255).astype(np.uint8)).convert("1")
        out = prefix.with_name(f"{prefix.name}_{name}.png")
        img.save(out)
        files[name] = out.name
    sidecar = prefix.with_name(f"{prefix.name}.json")
    sidecar.write_text(json.dumps({"channels": list(SKETCH_CHANNELS), "files": files}, indent=2))
    return sidecar


def load_mask_png(path: str | Path, expected_size: int | None = None) -> np.ndarray:
    """Read a binary mask PNG (1-bit or 8-bit {0, 255} / {0, 1})."""
    arr = np.asarray(Image.open(path).convert("L"))
    unique = np.unique(arr)
    if not np.isin(unique, (0, 1, 255)).all():
        raise DataValidationError(f"{path}: mask is not binary (values {unique[:8]})")
    mask = (arr > 0).astype(np.uint8)
    if expected_size is not None and mask.shape != (expected_size, expected_size):
        raise DataValidationError(
            f"{path}: expected {expected_size}x{expected_size}, got {mask.shape[0]}x{mask.shape[1]}"
        )
    return mask


def load_sketchset(prefix: str | Path) -> SketchSet:
    """Read masks written by :func:`save_sketchset`."""
    prefix = Path(prefix)
    sidecar = prefix.with_name(f"{prefix.name}.json")
    meta = json.loads(sidecar.read_text())
    if tuple(meta["channels"]) != SKETCH_CHANNELS:
        raise DataValidationError(f"{sidecar}: unexpected channel order {meta['channels']}")
    masks = {
        name: load_mask_png(prefix.with_name(meta["files"][name]))
        for name in SKETCH_CHANNELS
    }
    return SketchSet(**masks)
