"""Poisson point clouds in boxes and random geometric graphs.

The box is [-L/2, L/2]^d. Points come from a homogeneous Poisson process of
intensity lambda; two points are joined when their Euclidean distance is
strictly below the radius r. Neighbor search goes through a flat grid cell
list whose cell side equals the query radius, so a 3^d stencil covers every
candidate pair exactly once.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned hypercube [-side/2, side/2]^d."""

    d: int
    side: float

    def __post_init__(self) -> None:
        if not isinstance(self.d, int) or self.d < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.d}")
        if not (isinstance(self.side, (int, float)) and math.isfinite(self.side) and self.side > 0):
            raise ValueError(f"box side must be a finite positive real, got {self.side}")

    @property
    def volume(self) -> float:
        return self.side ** self.d

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean mask of rows of pts inside the closed box."""
        half = self.side / 2.0
        return np.all(np.abs(np.atleast_2d(pts)) <= half, axis=1)


class GridIndex:
    """Cell list over a point set: integer cells are floor(p / cell).

    Cells are encoded into a single int64 with one cell of padding on every
    side, so any {-1,0,1}^d neighbor of an occupied cell has a valid code and
    offset arithmetic never wraps across rows.
    """

    def __init__(self, points: np.ndarray, cell: float) -> None:
        if not (math.isfinite(cell) and cell > 0):
            raise ValueError(f"grid cell side must be a finite positive real, got {cell}")
        self.cell = float(cell)
        n, d = points.shape
        self.d = d
        self.n = n
        if n == 0:
            self._lo = np.zeros(d, dtype=np.int64)
            self._dims = np.ones(d, dtype=np.int64)
            ij = None
        else:
            ij = np.floor(points / self.cell).astype(np.int64)
            self._lo = ij.min(axis=0) - 1
            self._dims = ij.max(axis=0) + 1 - self._lo + 1
        self._strides = np.ones(d, dtype=np.int64)
        for k in range(d - 2, -1, -1):
            self._strides[k] = self._strides[k + 1] * self._dims[k + 1]
        if n == 0:
            self.codes = np.empty(0, dtype=np.int64)
            self.perm = np.empty(0, dtype=np.int64)
            self.points_sorted = points.reshape(0, d)
        else:
            codes = (ij - self._lo) @ self._strides
            self.perm = np.argsort(codes, kind="stable")
            self.codes = codes[self.perm]
            self.points_sorted = np.ascontiguousarray(points[self.perm])
        # occupied cells as (code, start, count) in sorted-code order
        if n == 0:
            self.cell_codes = np.empty(0, dtype=np.int64)
            self.cell_start = np.empty(0, dtype=np.int64)
            self.cell_count = np.empty(0, dtype=np.int64)
        else:
            boundary = np.flatnonzero(np.diff(self.codes)) + 1
            self.cell_start = np.concatenate(([0], boundary))
            self.cell_codes = self.codes[self.cell_start]
            self.cell_count = np.diff(np.concatenate((self.cell_start, [n])))

    def encode_cells(self, ij: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(ij).astype(np.int64) - self._lo) @ self._strides

    def block(self, code: int) -> tuple[int, int]:
        """(start, count) of the sorted-point block for one cell code."""
        k = np.searchsorted(self.cell_codes, code)
        if k < len(self.cell_codes) and self.cell_codes[k] == code:
            return int(self.cell_start[k]), int(self.cell_count[k])
        return 0, 0

    def candidates_in_box(self, lo_ij: np.ndarray, hi_ij: np.ndarray) -> np.ndarray:
        """Sorted-space indices of points whose cell lies in [lo_ij, hi_ij]."""
        lo_ij = np.maximum(lo_ij, self._lo)
        hi_ij = np.minimum(hi_ij, self._lo + self._dims - 1)
        if np.any(hi_ij < lo_ij) or self.n == 0:
            return np.empty(0, dtype=np.int64)
        ranges = [range(int(a), int(b) + 1) for a, b in zip(lo_ij, hi_ij)]
        chunks = []
        for cell in product(*ranges):
            code = int((np.array(cell, dtype=np.int64) - self._lo) @ self._strides)
            start, count = self.block(code)
            if count:
                chunks.append(np.arange(start, start + count))
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)


class PointCloud:
    """Finite Poisson sample with a grid index for neighbor queries."""

    def __init__(self, domain: BoxDomain, intensity: float, points: np.ndarray,
                 cell: float = 1.0) -> None:
        points = np.asarray(points, dtype=np.float64).reshape(-1, domain.d)
        if points.size and not np.all(domain.contains(points)):
            bad = int(np.flatnonzero(~domain.contains(points))[0])
            raise ValueError(f"point {bad} lies outside the domain")
        self.domain = domain
        self.intensity = float(intensity)
        self.points = points
        self.points.setflags(write=False)
        self._grids: dict[float, GridIndex] = {}
        self.grid = self.grid_for(cell)

    def __len__(self) -> int:
        return len(self.points)

    def grid_for(self, cell: float) -> GridIndex:
        """Grid index at the given cell side, built once and cached."""
        key = float(cell)
        if key not in self._grids:
            self._grids[key] = GridIndex(self.points, key)
        return self._grids[key]


@dataclass
class GeometricGraph:
    """RGG adjacency: {u,v} is an edge iff 0 < ||u-v|| < radius (strict)."""

    cloud: PointCloud
    radius: float
    edges: np.ndarray          # (m, 2) int32, each row u < v, lexicographically sorted
    indptr: np.ndarray         # CSR row pointers, len n+1
    indices: np.ndarray        # CSR column ids, sorted within each row
    edge_ids: np.ndarray       # edge id per CSR entry, aligned with indices
    _labeling: object = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.cloud)

    @property
    def m(self) -> int:
        return len(self.edges)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def csr_matrix(self, weights: np.ndarray | None = None):
        """Symmetric scipy CSR over the adjacency, weighted if given."""
        from scipy.sparse import csr_matrix
        if weights is None:
            data = np.ones(len(self.indices), dtype=np.int8)
        else:
            data = np.asarray(weights, dtype=np.float64)[self.edge_ids]
        return csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def sample_ppp(domain: BoxDomain, intensity: float, rng: np.random.Generator) -> PointCloud:
    """Homogeneous Poisson sample: Poisson(lambda L^d) points, uniform in the box."""
    if not (isinstance(intensity, (int, float)) and math.isfinite(intensity)):
        raise ValueError(f"intensity must be a finite real, got {intensity}")
    if intensity < 0:
        raise ValueError(f"intensity must be nonnegative, got {intensity}")
    mean = intensity * domain.volume
    count = int(rng.poisson(mean)) if mean > 0 else 0
    half = domain.side / 2.0
    pts = rng.uniform(-half, half, size=(count, domain.d))
    return PointCloud(domain, intensity, pts)


def inject_points(domain: BoxDomain, pts) -> PointCloud:
    """Deterministic cloud from hand-placed points; rejects out-of-domain rows."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, domain.d)
    return PointCloud(domain, 0.0, pts)


def _cross_blocks(a_start, a_count, b_start, b_count):
    """All (i, j) index pairs between ragged block pairs, vectorized.

    Block k contributes a_count[k] * b_count[k] pairs; i indexes block A rows,
    j indexes block B rows, both in sorted-point space.
    """
    total = a_count * b_count
    grand = int(total.sum())
    if grand == 0:
        e = np.empty(0, dtype=np.int64)
        return e, e
    starts = np.cumsum(total) - total
    k = np.arange(grand, dtype=np.int64) - np.repeat(starts, total)
    b_rep = np.repeat(b_count, total)
    i = np.repeat(a_start, total) + k // b_rep
    j = np.repeat(b_start, total) + k % b_rep
    return i, j


def build_rgg(cloud: PointCloud, radius: float) -> GeometricGraph:
    """Build the strict-inequality RGG over the cloud.

    The grid is (re)built with cell side equal to the radius, so each of the
    (3^d - 1)/2 lexicographically positive offsets plus the within-cell case
    enumerates every candidate pair exactly once. Distances are compared as
    squares; ties at exactly r are excluded, as are coincident points.
    """
    if not (math.isfinite(radius) and radius > 0):
        raise ValueError(f"radius must be a finite positive real, got {radius}")
    grid = cloud.grid_for(radius)
    n, d = len(cloud), cloud.domain.d
    r2 = radius * radius
    pts = grid.points_sorted
    us, vs = [], []

    if n > 1:
        # within-cell pairs, local i < j
        i, j = _cross_blocks(grid.cell_start, grid.cell_count,
                             grid.cell_start, grid.cell_count)
        keep = i < j
        i, j = i[keep], j[keep]
        d2 = ((pts[i] - pts[j]) ** 2).sum(axis=1)
        keep = (d2 > 0.0) & (d2 < r2)
        us.append(i[keep])
        vs.append(j[keep])

        # cross-cell pairs, one offset at a time
        for off in product((-1, 0, 1), repeat=d):
            if off <= (0,) * d:
                continue
            shift = int(np.array(off, dtype=np.int64) @ grid._strides)
            targets = grid.cell_codes + shift
            pos = np.searchsorted(grid.cell_codes, targets)
            pos_c = np.minimum(pos, len(grid.cell_codes) - 1)
            ok = grid.cell_codes[pos_c] == targets
            if not ok.any():
                continue
            i, j = _cross_blocks(grid.cell_start[ok], grid.cell_count[ok],
                                 grid.cell_start[pos_c[ok]], grid.cell_count[pos_c[ok]])
            d2 = ((pts[i] - pts[j]) ** 2).sum(axis=1)
            keep = (d2 > 0.0) & (d2 < r2)
            us.append(i[keep])
            vs.append(j[keep])

    if us:
        su = np.concatenate(us)
        sv = np.concatenate(vs)
        # back to original ids, canonical u < v, lexicographic edge order
        ou = grid.perm[su]
        ov = grid.perm[sv]
        u = np.minimum(ou, ov)
        v = np.maximum(ou, ov)
        order = np.argsort(u * np.int64(n) + v, kind="stable")
        u, v = u[order], v[order]
    else:
        u = np.empty(0, dtype=np.int64)
        v = np.empty(0, dtype=np.int64)

    m = len(u)
    idx_dtype = np.int32 if n < 2 ** 31 and 2 * m < 2 ** 31 else np.int64
    src = np.concatenate((u, v))
    dst = np.concatenate((v, u))
    eid = np.concatenate((np.arange(m), np.arange(m)))
    order = np.argsort(src * np.int64(max(n, 1)) + dst, kind="stable")
    indices = dst[order].astype(idx_dtype)
    edge_ids = eid[order].astype(idx_dtype)
    counts = np.bincount(src, minlength=n)
    indptr = np.concatenate(([0], np.cumsum(counts))).astype(idx_dtype)
    edges = np.stack((u, v), axis=1).astype(idx_dtype).reshape(m, 2)
    return GeometricGraph(cloud, float(radius), edges, indptr, indices, edge_ids)


def neighbors_within(cloud: PointCloud, x, s: float) -> np.ndarray:
    """Vertex ids v with ||v - x|| <= s (closed ball), via grid cells meeting B(x, s)."""
    if s < 0:
        raise ValueError(f"query radius must be nonnegative, got {s}")
    if len(cloud) == 0:
        return np.empty(0, dtype=np.int64)
    x = np.asarray(x, dtype=np.float64).reshape(cloud.domain.d)
    grid = cloud.grid
    lo_ij = np.floor((x - s) / grid.cell).astype(np.int64)
    hi_ij = np.floor((x + s) / grid.cell).astype(np.int64)
    cand = grid.candidates_in_box(lo_ij, hi_ij)
    if len(cand) == 0:
        return np.empty(0, dtype=np.int64)
    d2 = ((grid.points_sorted[cand] - x) ** 2).sum(axis=1)
    hits = grid.perm[cand[d2 <= s * s]]
    return np.sort(hits)


def save_points_csv(cloud: PointCloud, path) -> None:
    """One point per row, d columns, header x0,...,x{d-1}."""
    d = cloud.domain.d
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{k}" for k in range(d)])
        for row in cloud.points:
            writer.writerow([repr(float(c)) for c in row])


def load_points_csv(path, domain: BoxDomain, intensity: float = 0.0) -> PointCloud:
    """Read a cloud saved by save_points_csv back into the given domain."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != [f"x{k}" for k in range(domain.d)]:
            raise ValueError(f"unexpected header {header} for d={domain.d}")
        pts = [[float(c) for c in row] for row in reader]
    cloud = PointCloud(domain, intensity, np.array(pts, dtype=np.float64).reshape(-1, domain.d))
    return cloud
