from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from terradiff.errors import DataValidationError
from terradiff.heightmap import HeightMap
from terradiff.hydrology import (
    D8_CODES,
    D8_OFFSETS,
    fill_pits,
    flow_accumulation,
    flow_direction_d8,
)

CODE_TO_OFFSET = dict(zip(D8_CODES, D8_OFFSETS))


def has_escape_path(z, start):
    """Brute-force oracle: a non-ascending 8-connected walk to the boundary."""
    h, w = z.shape
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        if r in (0, h - 1) or c in (0, w - 1):
            return True
        for dr, dc in D8_OFFSETS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and (nr, nc) not in seen and z[nr, nc] <= z[r, c]:
                seen.add((nr, nc))
                queue.append((nr, nc))
    return False


def follow_to_outlet(dirs, start, limit=10_000):
    r, c = start
    for _ in range(limit):
        code = int(dirs[r, c])
        if code == 0:
            return r, c
        dr, dc = CODE_TO_OFFSET[code]
        r, c = r + dr, c + dc
    raise AssertionError("pointer chain did not terminate")


class TestFillPits:
    def test_center_pit_raised_to_rim(self):
        z = np.full((3, 3), 5.0)
        z[1, 1] = 1.0
        filled = fill_pits(HeightMap(z)).values
        assert filled[1, 1] == 5.0
        assert has_escape_path(filled, (1, 1))

    def test_monotone_plane_unchanged(self):
        z = np.tile(np.arange(6, 0, -1.0), (4, 1))
        filled = fill_pits(HeightMap(z)).values
        assert np.array_equal(filled, z)

    def test_idempotent_on_random_grids(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            z = rng.uniform(0, 10, (8, 8))
            once = fill_pits(HeightMap(z)).values
            twice = fill_pits(HeightMap(once)).values
            assert np.array_equal(once, twice)
            assert (once >= z).all()

    @settings(max_examples=60, deadline=None)
    @given(
        hnp.arrays(
            np.float64,
            st.tuples(st.integers(2, 9), st.integers(2, 9)),
            elements=st.floats(min_value=0, max_value=100, allow_nan=False),
        )
    )
    def test_drainage_property(self, z):
        filled = fill_pits(HeightMap(z)).values
        assert (filled >= z).all()
        for r in range(filled.shape[0]):
            for c in range(filled.shape[1]):
                assert has_escape_path(filled, (r, c))


class TestFlowDirection:
    def test_east_sloping_plane(self):
        z = np.tile(np.arange(8, 0, -1.0), (5, 1))
        dirs = flow_direction_d8(HeightMap(z))
        assert (dirs[1:-1, :-1] == 1).all()  # interior flows east
        assert (dirs[:, -1] == 0).all()  # east edge is the outlet

    def test_tie_prefers_east(self):
        # center drops equally to east and south
        z = np.array([[9.0, 9.0, 9.0], [9.0, 5.0, 4.0], [9.0, 4.0, 9.0]])
        dirs = flow_direction_d8(fill_pits(HeightMap(z)))
        assert dirs[1, 1] == 1

    def test_bowl_drains_to_single_outlet(self):
        z = np.full((5, 5), 9.0)
        z[2, 2] = 1.0
        z[0, 2] = 0.5  # the one low boundary point
        filled = fill_pits(HeightMap(z))
        dirs = flow_direction_d8(filled)
        # the filled bowl is flat at 9.0 except the escape chute
        outlets = {follow_to_outlet(dirs, (r, c)) for r in range(5) for c in range(5)}
        for outlet in outlets:
            assert dirs[outlet] == 0
        assert follow_to_outlet(dirs, (2, 2)) == (0, 2)

    def test_unfilled_pit_raises(self):
        z = np.full((3, 3), 5.0)
        z[1, 1] = 1.0
        with pytest.raises(DataValidationError, match="not pit-filled"):
            flow_direction_d8(HeightMap(z))

    def test_constant_grid_resolves_to_boundary(self):
        dirs = flow_direction_d8(HeightMap(np.zeros((5, 5))))
        assert (dirs[0, :] == 0).all() and (dirs[:, 0] == 0).all()
        assert follow_to_outlet(dirs, (2, 2))[0] in (0, 4) or follow_to_outlet(dirs, (2, 2))[1] in (0, 4)


class TestFlowAccumulation:
    def test_chain(self):
        dirs = np.array([[1, 1, 1, 1, 0]], dtype=np.uint8)
        acc = flow_accumulation(dirs)
        assert np.array_equal(acc, [[1, 2, 3, 4, 5]])

    def test_all_outlets(self):
        acc = flow_accumulation(np.zeros((3, 4), dtype=np.uint8))
        assert (acc == 1).all()

    def test_conservation_random(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            z = rng.uniform(0, 10, (8, 8))
            dirs = flow_direction_d8(fill_pits(HeightMap(z)))
            acc = flow_accumulation(dirs)
            assert acc[dirs == 0].sum() == 64
            # oracle: independently count contributors by following pointers
            counts = np.zeros((8, 8), dtype=int)
            for r in range(8):
                for c in range(8):
                    rr, cc = r, c
                    counts[rr, cc] += 1
                    while dirs[rr, cc] != 0:
                        dr, dc = CODE_TO_OFFSET[int(dirs[rr, cc])]
                        rr, cc = rr + dr, cc + dc
                        counts[rr, cc] += 1
            assert np.array_equal(counts, acc)

    def test_cycle_detected(self):
        dirs = np.zeros((1, 2), dtype=np.uint8)
        dirs[0, 0] = 1   # east
        dirs[0, 1] = 16  # west
        with pytest.raises(DataValidationError, match="cycle"):
            flow_accumulation(dirs)

    def test_off_grid_pointer_rejected(self):
        dirs = np.full((2, 2), 1, dtype=np.uint8)  # east column points off-grid
        with pytest.raises(DataValidationError, match="off-grid"):
            flow_accumulation(dirs)
