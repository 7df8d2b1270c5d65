"""Pit filling, D8 flow direction, and flow accumulation.

Direction codes follow the common D8 convention: E=1, SE=2, S=4, SW=8,
W=16, NW=32, N=64, NE=128, and 0 for boundary outlets. Ties between
equally steep descents break in that same scan order.
"""

from __future__ import annotations

import heapq
from collections import deque

import numpy as np

from .errors import DataValidationError
from .heightmap import HeightMap

# (drow, dcol) in tie-break order E, SE, S, SW, W, NW, N, NE
D8_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
D8_CODES = (1, 2, 4, 8, 16, 32, 64, 128)
D8_DIST = (1.0, np.sqrt(2.0), 1.0, np.sqrt(2.0), 1.0, np.sqrt(2.0), 1.0, np.sqrt(2.0))
_CODE_TO_OFFSET = dict(zip(D8_CODES, D8_OFFSETS))


def fill_pits(dem: HeightMap) -> HeightMap:
    """Raise interior depressions until every cell drains to the boundary.

    Priority-flood from the boundary: cells are visited in order of their
    filled elevation, and each unvisited neighbor is raised to at least the
    spill level of the cell it was reached from. Output >= input
    elementwise, and the operation is idempotent.
    """
    z = dem.values
    h, w = z.shape
    out = z.copy()
    visited = np.zeros((h, w), dtype=bool)

    heap: list[tuple[float, int, int, int]] = []
    counter = 0
    for r in range(h):
        for c in (range(w) if r in (0, h - 1) else (0, w - 1)):
            visited[r, c] = True
            heap.append((out[r, c], counter, r, c))
            counter += 1
    heapq.heapify(heap)

    while heap:
        level, _, r, c = heapq.heappop(heap)
        for dr, dc in D8_OFFSETS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and not visited[nr, nc]:
                visited[nr, nc] = True
                out[nr, nc] = max(out[nr, nc], level)
                heapq.heappush(heap, (out[nr, nc], counter, nr, nc))
                counter += 1

    return HeightMap(out, cell_scale=dem.cell_scale)


def _steepest_descent(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell best drop/distance over the 8 neighbors and its code index."""
    h, w = z.shape
    padded = np.full((h + 2, w + 2), np.inf)
    padded[1:-1, 1:-1] = z
    drops = np.empty((8, h, w))
    for k, (dr, dc) in enumerate(D8_OFFSETS):
        neighbor = padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
        drops[k] = (z - neighbor) / D8_DIST[k]
    best_k = np.argmax(drops, axis=0)  # first max wins: documented tie order
    best = np.take_along_axis(drops, best_k[None], axis=0)[0]
    return best, best_k


def flow_direction_d8(dem: HeightMap) -> np.ndarray:
    """Steepest-descent D8 pointers for a pit-filled grid.

    Flats route along shortest equal-elevation paths (breadth-first) toward
    the nearest cell that already drains; boundary cells with no lower
    neighbor are outlets (code 0). Raises if a pit remains.
    """
    z = dem.values
    h, w = z.shape
    best, best_k = _steepest_descent(z)

    codes = np.zeros((h, w), dtype=np.uint8)
    resolved = np.zeros((h, w), dtype=bool)
    boundary = np.zeros((h, w), dtype=bool)
    boundary[0, :] = boundary[-1, :] = True
    boundary[:, 0] = boundary[:, -1] = True

    downhill = best > 0
    codes[downhill] = np.asarray(D8_CODES, dtype=np.uint8)[best_k[downhill]]
    resolved |= downhill
    outlets = boundary & ~downhill
    resolved |= outlets  # code stays 0

    pits = ~boundary & (best < 0)
    if pits.any():
        r, c = np.argwhere(pits)[0]
        raise DataValidationError(
            f"grid is not pit-filled: cell ({r}, {c}) has no lower or equal neighbor"
        )

    if resolved.all():
        return codes

    # Resolve flats: multi-source BFS over equal-elevation links from every
    # already-draining cell, then point each flat cell one hop down the
    # distance field.
    dist = np.full((h, w), -1, dtype=np.int64)
    dist[resolved] = 0
    queue = deque((r, c) for r, c in np.argwhere(resolved))
    while queue:
        r, c = queue.popleft()
        for dr, dc in D8_OFFSETS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and dist[nr, nc] < 0 and z[nr, nc] == z[r, c]:
                dist[nr, nc] = dist[r, c] + 1
                queue.append((nr, nc))

    flat_cells = np.argwhere(~resolved)
    unresolvable = [tuple(rc) for rc in flat_cells if dist[rc[0], rc[1]] < 0]
    if unresolvable:
        raise DataValidationError(
            f"grid is not pit-filled: flat at {unresolvable[0]} has no drainage exit"
        )
    for r, c in flat_cells:
        target = dist[r, c] - 1
        for k, (dr, dc) in enumerate(D8_OFFSETS):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and z[nr, nc] == z[r, c] and dist[nr, nc] == target:
                codes[r, c] = D8_CODES[k]
                break
    return codes


def flow_accumulation(dirs: np.ndarray) -> np.ndarray:
    """Contributing-cell counts: acc(c) = 1 + sum of donor accumulations.

    Processes cells in topological order of the pointer graph and raises on
    a cycle. Over any grid whose paths all end at outlets, accumulation at
    the outlets sums to the total cell count.
    """
    h, w = dirs.shape
    valid = set(D8_CODES) | {0}
    targets = np.full((h, w, 2), -1, dtype=np.int64)
    indeg = np.zeros((h, w), dtype=np.int64)
    for r in range(h):
        for c in range(w):
            code = int(dirs[r, c])
            if code == 0:
                continue
            if code not in valid:
                raise DataValidationError(f"invalid D8 code {code} at ({r}, {c})")
            dr, dc = _CODE_TO_OFFSET[code]
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w):
                raise DataValidationError(f"direction at ({r}, {c}) points off-grid")
            targets[r, c] = (nr, nc)
            indeg[nr, nc] += 1

    acc = np.ones((h, w), dtype=np.int64)
    queue = deque((r, c) for r, c in np.argwhere(indeg == 0))
    processed = 0
    while queue:
        r, c = queue.popleft()
        processed += 1
        nr, nc = targets[r, c]
        if nr < 0:
            continue
        acc[nr, nc] += acc[r, c]
        indeg[nr, nc] -= 1
        if indeg[nr, nc] == 0:
            queue.append((nr, nc))
    if processed != h * w:
        raise DataValidationError("cycle detected in flow directions")
    return acc
