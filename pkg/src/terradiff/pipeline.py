"""Dataset construction: tiles, sketches, and the manifest on disk."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .dem import (
    DEFAULT_TILE_SIZE,
    DatasetManifest,
    TileRecord,
    iter_tiles,
    load_dem,
    split_dataset,
    synth_dem,
)
from .heightmap import HeightMap, normalize, write_tile
from .seeding import substream
from .sketches import SketchConfig, build_sketchset, save_sketchset


def _smallest_fractal_size(tile_size: int) -> int:
    size = 3
    while size < tile_size:
        size = 2 * size - 1
    return size


def _write_pairs(
    out_dir: Path,
    pairs: list[tuple[TileRecord, HeightMap]],
    sketch_cfg: SketchConfig,
) -> list[TileRecord]:
    (out_dir / "tiles").mkdir(parents=True, exist_ok=True)
    (out_dir / "sketches").mkdir(parents=True, exist_ok=True)
    records = []
    for record, dem_tile in pairs:
        sketch = build_sketchset(dem_tile, sketch_cfg)
        write_tile(out_dir / record.path, normalize(dem_tile))
        save_sketchset(out_dir / "sketches" / record.id, sketch)
        records.append(record)
    return records


def build_synthetic_dataset(
    out_dir: str | Path,
    n_tiles: int,
    seed: int,
    *,
    tile_size: int = DEFAULT_TILE_SIZE,
    test_fraction: float = 0.2,
    roughness: float = 0.65,
    relief: float = 1000.0,
    sketch_cfg: SketchConfig | None = None,
) -> Path:
    """Build a dataset of ``n_tiles`` fractal tiles with paired sketches.

    Fully deterministic in ``seed``; every tile comes from its own seeded
    fractal DEM.
    """
    out_dir = Path(out_dir)
    source_size = _smallest_fractal_size(tile_size)
    pairs = []
    for i in range(n_tiles):
        dem_seed = substream(seed, f"dem:{i}")
        dem = synth_dem(dem_seed, source_size, roughness, relief)
        dem_tile = next(iter_tiles(dem, tile_size))[2]
        tile_id = f"synth-{seed}-{i:04d}"
        record = TileRecord(
            id=tile_id,
            path=f"tiles/{tile_id}.tdn",
            source=f"synthetic:{dem_seed}",
            offset=(0, 0),
        )
        pairs.append((record, dem_tile))
    records = _write_pairs(out_dir, pairs, sketch_cfg or SketchConfig())
    manifest = split_dataset(records, test_fraction, substream(seed, "split"), tile_size)
    manifest.base_dir = out_dir
    return manifest.save(out_dir / "manifest.json")


def build_dataset_from_rasters(
    raster_paths: Sequence[str | Path],
    out_dir: str | Path,
    seed: int,
    *,
    tile_size: int = DEFAULT_TILE_SIZE,
    stride: int | None = None,
    test_fraction: float = 0.2,
    sketch_cfg: SketchConfig | None = None,
    infill_nodata: bool = False,
    allow_tiff: bool = False,
) -> Path:
    """Tile user-supplied raster DEMs into a dataset with paired sketches."""
    out_dir = Path(out_dir)
    pairs = []
    for raster in raster_paths:
        raster = Path(raster)
        dem = load_dem(raster, infill_nodata=infill_nodata, allow_tiff=allow_tiff)
        for row, col, dem_tile in iter_tiles(dem, tile_size, stride):
            tile_id = f"{raster.stem}-r{row:05d}-c{col:05d}"
            record = TileRecord(
                id=tile_id,
                path=f"tiles/{tile_id}.tdn",
                source=raster.name,
                offset=(row, col),
            )
            pairs.append((record, dem_tile))
    records = _write_pairs(out_dir, pairs, sketch_cfg or SketchConfig())
    manifest = split_dataset(records, test_fraction, substream(seed, "split"), tile_size)
    manifest.base_dir = out_dir
    return manifest.save(out_dir / "manifest.json")
