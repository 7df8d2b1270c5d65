import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from terradiff.errors import DataValidationError, UnsupportedFormatError
from terradiff.heightmap import (
    HeightMap,
    NormMeta,
    denormalize,
    normalize,
    read_tile,
    write_tile,
)


def test_rejects_nonfinite():
    with pytest.raises(DataValidationError):
        HeightMap(np.array([[0.0, np.nan]]))


def test_norm_meta_degenerate_invariant():
    with pytest.raises(DataValidationError):
        NormMeta(0.0, 0.0, degenerate=False)
    with pytest.raises(DataValidationError):
        NormMeta(0.0, 5.0, degenerate=True)


def test_normalize_midpoint_and_endpoint():
    tile = HeightMap(np.array([[10.0, 60.0], [110.0, 60.0]]))
    out = normalize(tile)
    assert out.values[0, 0] == pytest.approx(-1.0)
    assert out.values[0, 1] == pytest.approx(0.0)
    assert out.values[1, 0] == pytest.approx(1.0)
    assert out.norm == NormMeta(10.0, 100.0)


def test_normalize_constant_tile_degenerate():
    out = normalize(HeightMap(np.full((4, 4), 500.0)))
    assert (out.values == 0).all()
    assert out.norm.degenerate and out.norm.min_elev == 500.0


def test_normalize_twice_rejected():
    with pytest.raises(DataValidationError):
        normalize(normalize(HeightMap(np.array([[0.0, 1.0]]))))


@settings(max_examples=50, deadline=None)
@given(
    hnp.arrays(
        np.float64,
        (6, 6),
        elements=st.floats(min_value=-4000, max_value=9000, allow_nan=False),
    )
)
def test_normalize_round_trip_property(values):
    tile = HeightMap(values)
    back = denormalize(normalize(tile))
    scale = max(1.0, np.abs(values).max())
    assert np.allclose(back.values, values, rtol=1e-6, atol=1e-6 * scale)


def test_denormalize_degenerate_restores_constant():
    tile = HeightMap(np.full((3, 3), 42.0))
    assert (denormalize(normalize(tile)).values == 42.0).all()


def test_tile_store_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tile = normalize(HeightMap(rng.uniform(0, 900, (16, 12))))
    path = tmp_path / "tile.tdn"
    write_tile(path, tile)
    assert path.read_bytes()[:4] == b"TDN1"
    back = read_tile(path)
    # header floats are f32 on disk
    assert back.norm.min_elev == pytest.approx(tile.norm.min_elev, rel=1e-6)
    assert back.norm.range_elev == pytest.approx(tile.norm.range_elev, rel=1e-6)
    assert back.norm.degenerate == tile.norm.degenerate
    assert np.allclose(back.values, tile.values, atol=1e-6)
    assert (back.width, back.height) == (12, 16)


def test_tile_store_requires_normalized(tmp_path):
    with pytest.raises(DataValidationError):
        write_tile(tmp_path / "x.tdn", HeightMap(np.zeros((2, 2))))


def test_tile_store_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.tdn"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(UnsupportedFormatError):
        read_tile(path)
