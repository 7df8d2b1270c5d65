"""DEM loading, synthesis, tiling, and dataset manifests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import DataValidationError, UnsupportedFormatError
from .heightmap import HeightMap

DEFAULT_TILE_SIZE = 144


@dataclass(frozen=True)
class TileRecord:
    id: str
    path: str
    split: str = ""
    source: str = ""
    offset: tuple[int, int] = (0, 0)


@dataclass
class DatasetManifest:
    """Tile records plus the split that produced them."""

    tile_size: int
    seed: int
    entries: list[TileRecord] = field(default_factory=list)
    base_dir: Path | None = None

    def ids(self, split: str | None = None) -> list[str]:
        return [e.id for e in self.entries if split is None or e.split == split]

    def entry(self, tile_id: str) -> TileRecord:
        for e in self.entries:
            if e.id == tile_id:
                return e
        raise KeyError(tile_id)

    def tile_path(self, entry: TileRecord) -> Path:
        base = self.base_dir or Path(".")
        return base / entry.path

    def sketch_prefix(self, entry: TileRecord) -> Path:
        base = self.base_dir or Path(".")
        return base / "sketches" / entry.id

    def to_json(self) -> str:
        payload = {
            "tile_size": self.tile_size,
            "seed": self.seed,
            "entries": [
                {
                    "id": e.id,
                    "path": e.path,
                    "split": e.split,
                    "source": e.source,
                    "offset": list(e.offset),
                }
                for e in self.entries
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        payload = json.loads(path.read_text())
        entries = [
            TileRecord(
                id=e["id"],
                path=e["path"],
                split=e["split"],
                source=e.get("source", ""),
                offset=tuple(e.get("offset", (0, 0))),
            )
            for e in payload["entries"]
        ]
        return cls(
            tile_size=payload["tile_size"],
            seed=payload["seed"],
            entries=entries,
            base_dir=path.parent,
        )


def _read_sidecar(path: Path) -> dict:
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        return {}
    return json.loads(sidecar.read_text())


def _infill_nearest(values: np.ndarray, invalid: np.ndarray) -> np.ndarray:
    from scipy import ndimage

    _, (ir, ic) = ndimage.distance_transform_edt(invalid, return_indices=True)
    return values[ir, ic]


def load_dem(
    path: str | Path,
    *,
    max_nodata_fraction: float = 0.1,
    infill_nodata: bool = False,
    allow_tiff: bool = False,
) -> HeightMap:
    """Load a raster DEM.

    Supported inputs: 16-bit grayscale PNG, and single-band TIFF behind the
    ``allow_tiff`` flag. Elevation in meters is ``pixel * scale + offset``
    with scale/offset taken from the JSON sidecar next to the raster
    (defaults 1 and 0). Cells equal to the sidecar's ``nodata`` value are
    rejected unless ``infill_nodata`` asks for nearest-neighbor infill, and
    always rejected above ``max_nodata_fraction``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        img = Image.open(path)
        if img.mode not in ("I;16", "I", "I;16B"):
            raise UnsupportedFormatError(
                f"{path}: expected a 16-bit grayscale PNG, got mode {img.mode!r}"
            )
        raw = np.asarray(img, dtype=np.float64)
    elif suffix in (".tif", ".tiff"):
        if not allow_tiff:
            raise UnsupportedFormatError(
                f"{path}: TIFF input is feature-flagged; pass allow_tiff=True"
            )
        import tifffile

        raw = np.asarray(tifffile.imread(path), dtype=np.float64)
        if raw.ndim != 2:
            raise UnsupportedFormatError(f"{path}: expected a single-band raster, got shape {raw.shape}")
    else:
        raise UnsupportedFormatError(f"{path}: unsupported raster format {suffix!r}")

    meta = _read_sidecar(path)
    scale = float(meta.get("scale", 1.0))
    offset = float(meta.get("offset", 0.0))
    nodata = meta.get("nodata")

    invalid = ~np.isfinite(raw)
    if nodata is not None:
        invalid |= raw == float(nodata)
    frac = float(invalid.mean())
    if frac > 0:
        if frac > max_nodata_fraction:
            raise DataValidationError(
                f"{path}: nodata fraction exceeded ({frac:.3f} > {max_nodata_fraction})"
            )
        if not infill_nodata:
            raise DataValidationError(
                f"{path}: raster contains nodata cells; pass infill_nodata=True to infill"
            )
        raw = _infill_nearest(raw, invalid)

    return HeightMap(raw * scale + offset, cell_scale=float(meta.get("cell_scale", 1.0)))


def synth_dem(seed: int, size: int, roughness: float, relief: float = 1000.0) -> HeightMap:
    """Fractal terrain by per-quad midpoint displacement.

    ``size`` must be 2**k + 1. Deterministic for a fixed (seed, size,
    roughness). As roughness -> 0 the grid converges to the bilinear
    interpolation of the four random corner elevations.

    Per subdivision level the draw order is fixed: quad centers, then
    horizontal-edge midpoints, then vertical-edge midpoints, each as one
    Gaussian array.
    """
    if size < 3 or (size - 1) & (size - 2) != 0:
        raise DataValidationError(f"size must be 2**k + 1 with k >= 1, got {size}")
    if not 0.0 < roughness < 1.0:
        raise DataValidationError(f"roughness must lie in (0, 1), got {roughness}")

    rng = np.random.default_rng(seed)
    g = np.zeros((size, size))
    g[0, 0], g[0, -1], g[-1, 0], g[-1, -1] = rng.uniform(0.0, relief, size=4)

    step = size - 1
    amp = relief / 2.0
    while step >= 2:
        half = step // 2
        amp *= roughness

        tl = g[0:-1:step, 0:-1:step]
        tr = g[0:-1:step, step::step]
        bl = g[step::step, 0:-1:step]
        br = g[step::step, step::step]
        g[half::step, half::step] = 0.25 * (tl + tr + bl + br) + rng.normal(0.0, amp, tl.shape)

        left = g[::step, 0:-1:step]
        right = g[::step, step::step]
        g[::step, half::step] = 0.5 * (left + right) + rng.normal(0.0, amp, left.shape)

        top = g[0:-1:step, ::step]
        bottom = g[step::step, ::step]
        g[half::step, ::step] = 0.5 * (top + bottom) + rng.normal(0.0, amp, top.shape)

        step = half

    return HeightMap(g)


def iter_tiles(
    dem: HeightMap, size: int = DEFAULT_TILE_SIZE, stride: int | None = None
) -> Iterator[tuple[int, int, HeightMap]]:
    """Yield (row_offset, col_offset, tile) over axis-aligned crops.

    Partial edge tiles are dropped, never padded.
    """
    stride = stride or size
    if dem.height < size or dem.width < size:
        raise DataValidationError(
            f"DEM {dem.height}x{dem.width} is smaller than tile size {size}"
        )
    for r in range(0, dem.height - size + 1, stride):
        for c in range(0, dem.width - size + 1, stride):
            yield r, c, HeightMap(dem.values[r : r + size, c : c + size].copy(), dem.cell_scale)


def tile(dem: HeightMap, size: int = DEFAULT_TILE_SIZE, stride: int | None = None) -> list[HeightMap]:
    """Crop ``dem`` into size x size tiles on a regular stride grid."""
    return [t for _, _, t in iter_tiles(dem, size, stride)]


def split_dataset(
    records: Sequence[TileRecord],
    test_fraction: float,
    seed: int,
    tile_size: int = DEFAULT_TILE_SIZE,
) -> DatasetManifest:
    """Assign train/test split tags by a seeded shuffle.

    The test partition holds floor(n * test_fraction) tiles, clamped to
    [1, n - 1].
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(records)
    if n < 2:
        raise DataValidationError(f"need at least 2 tiles to split, got {n}")
    n_test = min(max(int(n * test_fraction), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = set(perm[:n_test].tolist())
    entries = [
        TileRecord(
            id=rec.id,
            path=rec.path,
            split="test" if i in test_idx else "train",
            source=rec.source,
            offset=rec.offset,
        )
        for i, rec in enumerate(records)
    ]
    return DatasetManifest(tile_size=tile_size, seed=seed, entries=entries)
