"""Augmented graph: base RGG plus a lattice overlay with deterministic weights.

Extra vertices are the lattice points t*Z^d clipped to the box (with a
half-cell margin so every base vertex's cell anchor exists). Extra edges join
each lattice point u to the base vertices in the half-open cell
u + [-t/2, t/2)^d, and lattice points at Euclidean distance exactly t (axis
neighbors). Every extra edge has weight kappa * t.

Since each base vertex lies in exactly one cell, the extra-edge-only path
between two vertices is forced: hop to the cell anchor when the endpoint is
a base vertex, then an L1 walk on the lattice. The structural bounds below
are asserted on every query:

  hops <= (sqrt(d)/t) ||u-v|| + d          when >= 1 endpoint is a lattice point
  hops <= sum_i ceil(|u_i-v_i|/t) + 2      when both endpoints are base vertices
  hops(o, q^t(x)) <= (3d/t) ||x||          for ||x|| >= 1, t in [1, ||x||]
  Y_{t,x} <= 3 d kappa ||x||               same window, feasible budget

The two-case hop bound reflects that the single-lattice-endpoint form can be
beaten by up to two anchor hops when both endpoints are base vertices in
adjacent cells; no experiment queries that case with the first form.
"""

from __future__ import annotations

import math
import os
import pickle
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .fpp import PassageTimeField, canonical_predecessors_csr
from .geometry import GeometricGraph
from .percolation import ComponentLabeling, components


class BudgetInfeasible(ValueError):
    """No path from o to the target within the hop budget."""


class NotAnExcursion(ValueError):
    """Path does not have giant endpoints with a non-giant interior."""


@dataclass(frozen=True)
class BoxDecomposition:
    """Cells z*t + [-t/2, t/2)^d, z in Z^d; cell-of-point is floor-based."""

    spacing: float

    def cell_of(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return np.floor(pts / self.spacing + 0.5).astype(np.int64)


@dataclass
class TruncatedQuery:
    target: np.ndarray
    hop_budget: int
    value: float
    witness: np.ndarray     # vertex ids, o first

    @property
    def hops(self) -> int:
        return len(self.witness) - 1


class AugmentedGraph:
    """Combined vertex space: base ids 0..n-1, then lattice ids in raster order."""

    def __init__(self, graph: GeometricGraph, field: PassageTimeField,
                 spacing: float, kappa: float) -> None:
        if not (spacing >= 1):
            raise ValueError(f"lattice spacing must be >= 1, got {spacing}")
        if not (kappa > 1):
            raise ValueError(f"kappa must exceed 1, got {kappa}")
        self.graph = graph
        self.field = field
        self.spacing = float(spacing)
        self.kappa = float(kappa)
        self.decomposition = BoxDecomposition(self.spacing)

        t = self.spacing
        side = graph.cloud.domain.side
        d = graph.cloud.domain.d
        n = graph.n
        self.n_base = n
        self.d = d

        # lattice indices z with z*t in [-L/2 - t/2, L/2 + t/2]
        zmax = int(math.floor((side / 2.0 + t / 2.0) / t))
        self._zmax = zmax
        width = 2 * zmax + 1
        self._width = width
        self.n_lattice = width ** d
        grids = np.meshgrid(*([np.arange(-zmax, zmax + 1)] * d), indexing="ij")
        self.lattice_z = np.stack([g.ravel() for g in grids], axis=1)
        self.lattice_points = self.lattice_z * t
        self.n_total = n + self.n_lattice
        self.coords = np.concatenate((graph.cloud.points, self.lattice_points), axis=0)
        self.origin_id = self.lattice_id(np.zeros(d, dtype=np.int64))

        # anchor of each base vertex: the lattice point of its half-open cell
        if n:
            zc = self.decomposition.cell_of(graph.cloud.points)
            if np.any(np.abs(zc) > zmax):
                raise AssertionError("base vertex cell anchor fell outside the lattice")
            self.anchor = np.array([self.lattice_id(z) for z in zc], dtype=np.int64)
        else:
            self.anchor = np.empty(0, dtype=np.int64)

        self._build_csr()

    def lattice_id(self, z) -> int:
        z = np.asarray(z, dtype=np.int64).reshape(self.d)
        rank = 0
        for k in range(self.d):
            rank = rank * self._width + int(z[k] + self._zmax)
        return self.n_base + rank

    def lattice_z_of(self, vid: int) -> np.ndarray:
        rank = vid - self.n_base
        out = np.empty(self.d, dtype=np.int64)
        for k in range(self.d - 1, -1, -1):
            out[k] = rank % self._width - self._zmax
            rank //= self._width
        return out

    def is_lattice(self, vid: int) -> bool:
        return vid >= self.n_base

    def _build_csr(self) -> None:
        n, d, t = self.n_base, self.d, self.spacing
        kt = self.kappa * t
        # directed base entries reuse the graph CSR layout
        base_src = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.graph.indptr))
        base_dst = self.graph.indices.astype(np.int64)
        base_w = self.field.weights[self.graph.edge_ids]
        # anchor edges, both directions
        a_src = np.concatenate((np.arange(n, dtype=np.int64), self.anchor))
        a_dst = np.concatenate((self.anchor, np.arange(n, dtype=np.int64)))
        # lattice axis neighbors: +e_k partner where it exists, both directions
        l_src, l_dst = [], []
        ids = np.arange(self.n_lattice, dtype=np.int64) + n
        for k in range(d):
            stride = self._width ** (d - 1 - k)
            has_next = self.lattice_z[:, k] < self._zmax
            a = ids[has_next]
            b = a + stride
            l_src.extend((a, b))
            l_dst.extend((b, a))
        lat_src = np.concatenate(l_src) if l_src else np.empty(0, dtype=np.int64)
        lat_dst = np.concatenate(l_dst) if l_dst else np.empty(0, dtype=np.int64)

        src = np.concatenate((base_src, a_src, lat_src))
        dst = np.concatenate((base_dst, a_dst, lat_dst))
        w = np.concatenate((base_w, np.full(len(a_src) + len(lat_src), kt)))
        order = np.argsort(src * np.int64(self.n_total) + dst, kind="stable")
        self.csr_src = src[order]
        self.csr_dst = dst[order]
        self.csr_w = w[order]
        counts = np.bincount(self.csr_src, minlength=self.n_total)
        self.indptr = np.concatenate(([0], np.cumsum(counts)))
        self.matrix = csr_matrix((self.csr_w, self.csr_dst, self.indptr),
                                 shape=(self.n_total, self.n_total))

    def entry_weight(self, u: int, v: int) -> float:
        lo, hi = self.indptr[u], self.indptr[u + 1]
        k = np.searchsorted(self.csr_dst[lo:hi], v)
        if k >= hi - lo or self.csr_dst[lo + k] != v:
            raise KeyError(f"no edge {{{u}, {v}}} in the augmented graph")
        return float(self.csr_w[lo + k])

    def path_weight(self, path: np.ndarray) -> float:
        total = 0.0
        for a, b in zip(path[:-1], path[1:]):
            total += self.entry_weight(int(a), int(b))
        return total

    def labeling(self) -> ComponentLabeling:
        return components(self.graph)


def build_augmented(graph: GeometricGraph, field: PassageTimeField,
                    spacing: float, kappa: float) -> AugmentedGraph:
    return AugmentedGraph(graph, field, spacing, kappa)


def closest_vertex_t(aug: AugmentedGraph, x) -> int:
    """Nearest vertex of the augmented graph, smallest id on ties."""
    x = np.asarray(x, dtype=np.float64).reshape(aug.d)
    d2 = ((aug.coords - x) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def lattice_hops(aug: AugmentedGraph, u: int, v: int) -> int:
    """Hop count of the forced extra-edge-only path from u to v."""
    if u == v:
        return 0
    hops = 0
    if aug.is_lattice(u):
        zu = aug.lattice_z_of(u)
    else:
        zu = aug.lattice_z_of(int(aug.anchor[u]))
        hops += 1
    if aug.is_lattice(v):
        zv = aug.lattice_z_of(v)
    else:
        zv = aug.lattice_z_of(int(aug.anchor[v]))
        hops += 1
    hops += int(np.abs(zu - zv).sum())
    _assert_hop_bound(aug, u, v, hops)
    return hops


def lattice_only_path(aug: AugmentedGraph, u: int, v: int) -> np.ndarray:
    """The extra-edge-only path from u to v, walked axis by axis.

    Each base endpoint contributes its single anchor hop; between anchors the
    walk steps axis 0 first, then axis 1, and so on, which is the minimal L1
    walk and makes the returned path deterministic.
    """
    if u == v:
        return np.array([u], dtype=np.int64)
    path = [int(u)]
    zu = aug.lattice_z_of(u) if aug.is_lattice(u) else aug.lattice_z_of(int(aug.anchor[u]))
    zv = aug.lattice_z_of(v) if aug.is_lattice(v) else aug.lattice_z_of(int(aug.anchor[v]))
    if not aug.is_lattice(u):
        path.append(int(aug.anchor[u]))
    z = zu.copy()
    for k in range(aug.d):
        step = 1 if zv[k] > z[k] else -1
        while z[k] != zv[k]:
            z[k] += step
            path.append(aug.lattice_id(z))
    if not aug.is_lattice(v):
        path.append(int(v))
    # collapse the no-op case u -> anchor(u) == anchor(v) -> v == u handled above;
    # drop a duplicated anchor when u and v share the cell
    out = [path[0]]
    for p in path[1:]:
        if p != out[-1]:
            out.append(p)
    hops = len(out) - 1
    _assert_hop_bound(aug, u, v, hops)
    return np.array(out, dtype=np.int64)


def _assert_hop_bound(aug: AugmentedGraph, u: int, v: int, hops: int) -> None:
    t = aug.spacing
    d = aug.d
    diff = aug.coords[u] - aug.coords[v]
    norm = float(np.sqrt((diff ** 2).sum()))
    if aug.is_lattice(u) or aug.is_lattice(v):
        bound = math.sqrt(d) / t * norm + d
    else:
        bound = float(np.ceil(np.abs(diff) / t).sum()) + 2
    if hops > bound + 1e-9:
        raise AssertionError(
            f"extra-edge path bound violated: {hops} hops > {bound} for ({u}, {v})")


def t_passage_time(aug: AugmentedGraph, x, y) -> tuple[float, np.ndarray]:
    """T^t(x, y) over the augmented weights, with one minimizing path."""
    src = closest_vertex_t(aug, x)
    dst = closest_vertex_t(aug, y)
    if src == dst:
        return 0.0, np.array([src], dtype=np.int64)
    dist_arr = dijkstra(aug.matrix, directed=False, indices=src)
    pred = canonical_predecessors_csr(aug.indptr, aug.csr_dst, aug.csr_w, dist_arr, src)
    path = [dst]
    while path[-1] != src:
        path.append(int(pred[path[-1]]))
    return float(dist_arr[dst]), np.array(path[::-1], dtype=np.int64)


def _walk_layer_log(layers, target: int, budget: int) -> list[int]:
    """Reconstruct a witness from per-layer improvement logs.

    layers[h] maps vertex -> (value at layer h, predecessor). The final value
    of a vertex within the budget was written at its last improvement layer.
    """
    path = [target]
    h = budget
    cur = target
    while True:
        found = None
        for hh in range(min(h, len(layers) - 1), -1, -1):
            if cur in layers[hh]:
                found = hh
                break
        value, pred = layers[found][cur]
        if pred < 0:
            break
        path.append(pred)
        cur = pred
        h = found - 1
    return path[::-1]


class _LayerStore:
    """Per-layer improvement logs, spilled to disk past a memory budget."""

    def __init__(self, mem_budget_entries: int = 20_000_000) -> None:
        self.mem_budget = mem_budget_entries
        self.entries = 0
        self.in_memory: list[dict] = []
        self.spill_file = None
        self.spill_offsets: list[int] = []

    def append(self, layer: dict) -> None:
        self.entries += len(layer)
        if self.spill_file is None and self.entries > self.mem_budget:
            fd, path = tempfile.mkstemp(prefix="rggfpp-dp-", suffix=".layers")
            os.close(fd)
            self.spill_file = open(path, "w+b")
            os.unlink(path)
            for stored in self.in_memory:
                self._write(stored)
            self.in_memory = []
        if self.spill_file is None:
            self.in_memory.append(layer)
        else:
            self._write(layer)

    def _write(self, layer: dict) -> None:
        self.spill_offsets.append(self.spill_file.tell())
        pickle.dump(layer, self.spill_file, protocol=pickle.HIGHEST_PROTOCOL)

    def __len__(self) -> int:
        return len(self.in_memory) if self.spill_file is None else len(self.spill_offsets)

    def __getitem__(self, h: int):
        if self.spill_file is None:
            return self.in_memory[h]
        self.spill_file.seek(self.spill_offsets[h])
        return pickle.load(self.spill_file)

    def close(self) -> None:
        if self.spill_file is not None:
            self.spill_file.close()


def truncated_time(aug: AugmentedGraph, x, hop_budget: int,
                   mem_budget_entries: int = 20_000_000) -> TruncatedQuery:
    """Minimal augmented passage time from o to q^t(x) over <= hop_budget hops.

    Exact hop-indexed relaxation with two live layers; layering stops early
    once a pass improves nothing. A budget of at least n_total - 1 cannot
    bind (shortest paths are simple), so those queries run plain Dijkstra.
    """
    x = np.asarray(x, dtype=np.float64).reshape(aug.d)
    hop_budget = int(hop_budget)
    if hop_budget < 0:
        raise BudgetInfeasible(f"hop budget must be nonnegative, got {hop_budget}")
    norm = float(np.sqrt((x ** 2).sum()))
    source = aug.origin_id
    # the query is rooted at the lattice origin; x = o maps to it outright
    target = source if norm == 0.0 else closest_vertex_t(aug, x)

    if hop_budget >= aug.n_total - 1:
        # budget cannot bind; the query starts at the lattice origin by
        # convention, so run Dijkstra from that id rather than re-snapping
        dist_arr = dijkstra(aug.matrix, directed=False, indices=source)
        pred = canonical_predecessors_csr(aug.indptr, aug.csr_dst, aug.csr_w,
                                          dist_arr, source)
        path = [target]
        while path[-1] != source:
            path.append(int(pred[path[-1]]))
        witness = np.array(path[::-1], dtype=np.int64)
        query = TruncatedQuery(x, hop_budget, float(dist_arr[target]), witness)
    else:
        inf = np.inf
        dist_arr = np.full(aug.n_total, inf)
        dist_arr[source] = 0.0
        store = _LayerStore(mem_budget_entries)
        store.append({source: (0.0, -1)})
        src, dst, w = aug.csr_src, aug.csr_dst, aug.csr_w
        for _ in range(hop_budget):
            cand = dist_arr[src] + w
            order = np.lexsort((src, cand, dst))
            d_sorted = dst[order]
            first = np.concatenate(([True], d_sorted[1:] != d_sorted[:-1]))
            best_dst = d_sorted[first]
            best_cand = cand[order][first]
            best_src = src[order][first]
            improved = best_cand < dist_arr[best_dst]
            if not improved.any():
                break
            bd = best_dst[improved]
            dist_arr[bd] = best_cand[improved]
            store.append({int(v): (float(c), int(u)) for v, c, u in
                          zip(bd, best_cand[improved], best_src[improved])})
        if not np.isfinite(dist_arr[target]):
            store.close()
            raise BudgetInfeasible(
                f"no path to q^t(x) within {hop_budget} hops")
        witness = np.array(_walk_layer_log(store, target, len(store) - 1), dtype=np.int64)
        store.close()
        query = TruncatedQuery(x, hop_budget, float(dist_arr[target]), witness)

    if query.hops > hop_budget and query.hops > 0:
        raise AssertionError(f"witness has {query.hops} hops > budget {hop_budget}")
    recomputed = aug.path_weight(query.witness)
    if not math.isclose(recomputed, query.value, rel_tol=1e-9, abs_tol=1e-12):
        raise AssertionError(
            f"witness weight {recomputed} disagrees with value {query.value}")
    if norm >= 1.0 and 1.0 <= aug.spacing <= norm \
            and hop_budget >= lattice_hops(aug, source, target):
        bound = 3 * aug.d * aug.kappa * norm
        if query.value > bound * (1 + 1e-12):
            raise AssertionError(
                f"Y = {query.value} exceeds 3*d*kappa*||x|| = {bound}")
    return query


def box_crossings(path_coords: np.ndarray, decomposition: BoxDecomposition) -> int:
    """Distinct cells holding a path vertex or crossed by a path segment.

    Segment traversal steps axis crossings in order of the segment parameter,
    so cells are collected exactly (ties at cell corners step both axes).
    """
    pts = np.atleast_2d(np.asarray(path_coords, dtype=np.float64))
    t = decomposition.spacing
    cells = decomposition.cell_of(pts)
    seen = {tuple(c) for c in cells}
    for a, b, ca, cb in zip(pts[:-1], pts[1:], cells[:-1], cells[1:]):
        if tuple(ca) == tuple(cb):
            continue
        # parameter values where the segment crosses cell walls (m + 1/2) t
        steps = []
        delta = b - a
        for k in range(len(a)):
            if delta[k] == 0 or ca[k] == cb[k]:
                continue
            sign = 1 if delta[k] > 0 else -1
            for m in range(min(ca[k], cb[k]), max(ca[k], cb[k])):
                wall = (m + 0.5) * t
                s = (wall - a[k]) / delta[k]
                steps.append((s, k, sign))
        steps.sort()
        cell = ca.copy()
        for _, k, sign in steps:
            cell[k] += sign
            seen.add(tuple(cell))
    return len(seen)


def box_crossing_bound(d: int, norm: float, t: float, kprime: float,
                       radius: float) -> float:
    """Ceiling for cells touched by a budgeted witness from o to q^t(x)."""
    return (3 ** d + 1) * ((3 * d + kprime * radius) * norm / t + 1)


def excursions_of_path(aug: AugmentedGraph, labeling: ComponentLabeling,
                       path: np.ndarray):
    """Maximal giant-to-giant excursions: both endpoints in the giant
    component of the base graph, every interior vertex outside it.

    Leading or trailing segments without a giant endpoint (a witness starts
    at the lattice origin) are not excursions and are skipped.
    """
    giant = labeling.giant
    label = labeling.label
    n_base = aug.n_base

    def in_giant(vid: int) -> bool:
        return vid < n_base and label[vid] == giant

    anchors = [i for i, vid in enumerate(path) if in_giant(int(vid))]
    for a, b in zip(anchors[:-1], anchors[1:]):
        if b - a > 1:
            yield path[a:b + 1]


def finite_cluster_hop_check(aug: AugmentedGraph, path: np.ndarray,
                             labeling: ComponentLabeling | None = None) -> bool:
    """Excursion weight bound: sum of weights >= (kappa t / (2t + b)) ||x_n - x_0||_inf,

    with b the largest L-inf diameter among finite clusters the excursion
    visits. Lattice interior vertices contribute nothing to b.
    """
    if labeling is None:
        labeling = aug.labeling()
    path = np.asarray(path, dtype=np.int64)
    if len(path) < 2:
        raise NotAnExcursion("an excursion needs at least one interior vertex")
    giant = labeling.giant
    label = labeling.label
    n_base = aug.n_base
    ends_ok = all(int(v) < n_base and label[int(v)] == giant for v in (path[0], path[-1]))
    interior = path[1:-1]
    interior_ok = len(interior) > 0 and all(
        int(v) >= n_base or label[int(v)] != giant for v in interior)
    if not (ends_ok and interior_ok):
        raise NotAnExcursion("endpoints must be giant, interior must avoid the giant")

    clusters = {int(label[int(v)]) for v in interior if int(v) < n_base}
    b = 0.0
    pts = aug.graph.cloud.points
    for comp in clusters:
        member_pts = pts[np.flatnonzero(label == comp)]
        b = max(b, float((member_pts.max(axis=0) - member_pts.min(axis=0)).max()))
    t = aug.spacing
    lhs = aug.path_weight(path)
    span = float(np.abs(aug.coords[int(path[-1])] - aug.coords[int(path[0])]).max())
    rhs = aug.kappa * t / (2 * t + b) * span
    return lhs >= rhs - 1e-9


def discrepancy_rates(graph: GeometricGraph, field: PassageTimeField,
                      xs: np.ndarray, ts, kappa: float, delta: float,
                      budget_factor: float | None = None,
                      labeling: ComponentLabeling | None = None) -> list[dict]:
    """Per-(x, t) discrepancy indicators between Y, T^t, and T.

    Columns: x_norm, t, kappa, y_ne_tt, tt_ne_t, qshift_gap, plus structural
    check tallies (box-crossing count and bound, excursion checks). The hop
    budget is ceil(budget_factor * ||x||) with budget_factor defaulting to
    the rule 3 d kappa / delta.
    """
    from .percolation import closest_vertex_q
    from . import fpp

    if labeling is None:
        labeling = components(graph)
    d = graph.cloud.domain.d
    kprime = 3 * d * kappa / delta
    factor = kprime if budget_factor is None else float(budget_factor)
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))

    q_o = closest_vertex_q(graph, labeling, np.zeros(d))
    base_res = fpp.fpt_all_from(graph, field, np.zeros(d), labeling)
    rows = []
    for t in ts:
        aug = build_augmented(graph, field, float(t), kappa)
        decomp = aug.decomposition
        dist_o = dijkstra(aug.matrix, directed=False, indices=aug.origin_id)
        pred_o = canonical_predecessors_csr(aug.indptr, aug.csr_dst, aug.csr_w,
                                            dist_o, aug.origin_id)
        dist_qo = dijkstra(aug.matrix, directed=False, indices=q_o)
        for x in xs:
            norm = float(np.sqrt((x ** 2).sum()))
            budget = int(math.ceil(factor * norm))
            target = closest_vertex_t(aug, x)
            if budget >= aug.n_total - 1:
                y_val = float(dist_o[target])
                witness = [target]
                while witness[-1] != aug.origin_id:
                    witness.append(int(pred_o[witness[-1]]))
                witness = np.array(witness[::-1], dtype=np.int64)
                query = TruncatedQuery(x, budget, y_val, witness)
            else:
                query = truncated_time(aug, x, budget)
            tt_o = float(dist_o[target])
            q_x = closest_vertex_q(graph, labeling, x)
            tt_q = float(dist_qo[q_x])
            t_base = float(base_res.times[q_x])

            crossings = box_crossings(aug.coords[query.witness], decomp)
            cross_bound = box_crossing_bound(d, norm, float(t), kprime, graph.radius)
            if norm >= 1.0 and 1.0 <= t <= norm and crossings > cross_bound:
                raise AssertionError(
                    f"witness crosses {crossings} boxes > bound {cross_bound}")
            n_exc = 0
            for exc in excursions_of_path(aug, labeling, query.witness):
                n_exc += 1
                if not finite_cluster_hop_check(aug, exc, labeling):
                    raise AssertionError("excursion weight bound violated")
            rows.append({
                "x_norm": norm,
                "t": float(t),
                "kappa": float(kappa),
                "y_ne_tt": int(query.value != tt_o),
                "tt_ne_t": int(tt_q != t_base),
                "qshift_gap": abs(tt_o - tt_q),
                "hop_budget": budget,
                "witness_hops": query.hops,
                "box_crossings": crossings,
                "box_bound": cross_bound,
                "excursions_checked": n_exc,
            })
    return rows
