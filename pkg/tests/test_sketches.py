import numpy as np
import pytest
from PIL import Image

from terradiff.errors import DataValidationError
from terradiff.dem import synth_dem, tile
from terradiff.heightmap import HeightMap
from terradiff.hydrology import fill_pits, flow_accumulation, flow_direction_d8
from terradiff.sketches import (
    SketchConfig,
    SketchSet,
    build_sketchset,
    drainage_mask,
    extract_basins,
    extract_peaks,
    extract_ridges,
    extract_rivers,
    load_mask_png,
    load_sketchset,
    save_sketchset,
)


class TestExtractRivers:
    def test_uniform_accumulation_marks_all(self):
        assert (extract_rivers(np.full((4, 4), 3), 0.5) == 1).all()

    def test_chain_thresholds_last_two(self):
        acc = np.array([[1, 2, 3, 4, 5]])
        assert np.array_equal(extract_rivers(acc, 0.7), [[0, 0, 0, 1, 1]])

    def test_high_quantile_cell_budget(self):
        acc = np.arange(1, 144 * 144 + 1).reshape(144, 144)
        marked = int(extract_rivers(acc, 0.999).sum())
        assert marked <= 21

    def test_quantile_bounds(self):
        with pytest.raises(DataValidationError):
            extract_rivers(np.ones((2, 2)), 1.0)


class TestDuality:
    def test_ridges_equal_rivers_of_negation(self):
        dem = tile(synth_dem(3, 257, 0.6), 144)[0]
        negated = dem.negated()
        via_pipeline = extract_rivers(
            flow_accumulation(flow_direction_d8(fill_pits(negated))), 0.95
        )
        assert np.array_equal(extract_ridges(dem, 0.95), via_pipeline)

    def test_negating_tilted_plane_swaps_rivers_and_ridges(self):
        z = np.tile(np.arange(32, 0, -1.0), (16, 1))
        dem = HeightMap(z)
        assert np.array_equal(extract_ridges(dem, 0.9), drainage_mask(dem.negated(), 0.9))

    def test_constant_dem_has_empty_masks(self):
        dem = HeightMap(np.full((16, 16), 7.0))
        assert drainage_mask(dem).sum() == 0
        assert extract_ridges(dem).sum() == 0


class TestPeaksBasins:
    def test_gaussian_bump_marks_only_apex(self):
        y, x = np.mgrid[0:31, 0:31]
        z = np.exp(-((y - 15.0) ** 2 + (x - 15.0) ** 2) / 40.0)
        peaks = extract_peaks(HeightMap(z), window=9, min_prominence=0.0)
        assert peaks.sum() == 1 and peaks[15, 15] == 1

    def test_constant_grid_has_no_peaks(self):
        assert extract_peaks(HeightMap(np.ones((16, 16))), 9, 0.0).sum() == 0

    def test_window_dominance_keeps_taller_bump(self):
        y, x = np.mgrid[0:31, 0:31]
        tall = 2.0 * np.exp(-((y - 15.0) ** 2 + (x - 15.0) ** 2) / 6.0)
        short = 1.0 * np.exp(-((y - 15.0) ** 2 + (x - 18.0) ** 2) / 6.0)
        peaks = extract_peaks(HeightMap(tall + short), window=9, min_prominence=0.0)
        marked = np.argwhere(peaks)
        assert len(marked) == 1 and tuple(marked[0]) == (15, 15)

    def test_prominence_floor(self):
        z = np.zeros((11, 11))
        z[5, 5] = 1.0
        assert extract_peaks(HeightMap(z), 9, 0.5).sum() == 1
        assert extract_peaks(HeightMap(z), 9, 1.5).sum() == 0

    def test_window_validation(self):
        with pytest.raises(DataValidationError):
            extract_peaks(HeightMap(np.zeros((8, 8))), window=4)

    def test_basins_are_peaks_of_negation(self):
        rng = np.random.default_rng(2)
        z = rng.uniform(0, 5, (24, 24))
        assert np.array_equal(
            extract_basins(HeightMap(z), 9, 0.1),
            extract_peaks(HeightMap(-z), 9, 0.1),
        )


class TestBuildSketchset:
    def test_deterministic(self):
        dem = tile(synth_dem(5, 257, 0.6), 144)[0]
        a = build_sketchset(dem)
        b = build_sketchset(dem)
        assert np.array_equal(a.stacked(), b.stacked())

    def test_tilted_plane_rivers_parallel_and_no_peaks(self):
        z = np.tile(np.arange(144, 0, -1.0), (144, 1))
        sketch = build_sketchset(HeightMap(z))
        assert sketch.peaks.sum() == 0
        cols = np.unique(np.argwhere(sketch.rivers)[:, 1])
        # accumulation grows monotonically eastward, so marked cells form
        # full columns at the east side
        assert (sketch.rivers[:, cols] == 1).all()

    def test_volcano_peaks_on_rim_basin_in_crater(self):
        y, x = np.mgrid[0:49, 0:49]
        d = np.hypot(y - 24.0, x - 24.0)
        rim_radius = 12.0
        z = 100.0 - 8.0 * np.abs(d - rim_radius)
        sketch = build_sketchset(HeightMap(z), SketchConfig(prominence_frac=0.0))
        peak_cells = np.argwhere(sketch.peaks)
        assert len(peak_cells) > 0
        rim_dist = np.abs(np.hypot(peak_cells[:, 0] - 24.0, peak_cells[:, 1] - 24.0) - rim_radius)
        assert (rim_dist < 2.0).all()
        assert sketch.basins[24, 24] == 1

    def test_masks_binary_and_aligned(self):
        dem = tile(synth_dem(9, 257, 0.65), 144)[0]
        sketch = build_sketchset(dem)
        stacked = sketch.stacked()
        assert stacked.shape == (4, 144, 144)
        assert np.isin(stacked, (0, 1)).all()


class TestSketchSetType:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(DataValidationError):
            SketchSet(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((5, 4)), np.zeros((4, 4)))

    def test_nonbinary_rejected(self):
        bad = np.full((4, 4), 2.0)
        with pytest.raises(DataValidationError):
            SketchSet(bad, np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4)))


class TestSketchIO:
    def test_round_trip(self, tmp_path):
        dem = tile(synth_dem(4, 257, 0.65), 144)[0]
        sketch = build_sketchset(dem)
        save_sketchset(tmp_path / "t0001", sketch)
        back = load_sketchset(tmp_path / "t0001")
        assert np.array_equal(back.stacked(), sketch.stacked())

    def test_mask_loader_validates_size(self, tmp_path):
        path = tmp_path / "m.png"
        Image.fromarray(np.zeros((100, 100), dtype=np.uint8)).save(path)
        with pytest.raises(DataValidationError, match="expected 144x144"):
            load_mask_png(path, expected_size=144)

    def test_mask_loader_rejects_grayscale(self, tmp_path):
        path = tmp_path / "g.png"
        Image.fromarray((np.arange(64, dtype=np.uint8)).reshape(8, 8)).save(path)
        with pytest.raises(DataValidationError, match="not binary"):
            load_mask_png(path)
