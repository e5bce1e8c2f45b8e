"""First-passage times on the giant component.

Edge weights are i.i.d. from a distribution with no atom at zero and finite
exponential moments; both requirements are enforced structurally by the
admissible distribution kinds. Passage times and geodesics come from
Dijkstra with a canonicalized predecessor pass, so the reported geodesic is
deterministic even in the measure-zero event of a tie: among incoming edges
that attain dist[u] + w == dist[v] exactly, the smallest vertex id wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .geometry import GeometricGraph
from .percolation import (ComponentLabeling, NoGiantComponent, closest_vertex_q,
                          components)


class DistributionRejected(ValueError):
    """Distribution violates positivity or exponential-moment requirements."""


@dataclass(frozen=True)
class PassageDistribution:
    """Admissible passage-time laws.

    kind "exponential": rate > 0.
    kind "uniform": support (a, b) with 0 < a < b.
    kind "lognormal": parameters (mu, sigma), truncated above at the
    cap_quantile quantile so the exponential moment exists; sampling is by
    inverse CDF on U ~ Uniform(0, cap_quantile), which keeps the law
    continuous (no atom appears at the cap).
    """

    kind: str
    params: tuple
    cap_quantile: float = 1.0 - 1e-12

    @staticmethod
    def exponential(rate: float) -> "PassageDistribution":
        return PassageDistribution("exponential", (float(rate),))

    @staticmethod
    def uniform_shifted(a: float, b: float) -> "PassageDistribution":
        return PassageDistribution("uniform", (float(a), float(b)))

    @staticmethod
    def lognormal(mu: float, sigma: float,
                  cap_quantile: float = 1.0 - 1e-12) -> "PassageDistribution":
        return PassageDistribution("lognormal", (float(mu), float(sigma)), float(cap_quantile))

    def validate(self) -> None:
        if self.kind == "exponential":
            (rate,) = self.params
            if not (math.isfinite(rate) and rate > 0):
                raise DistributionRejected(f"exponential rate must be positive, got {rate}")
        elif self.kind == "uniform":
            a, b = self.params
            if not (math.isfinite(a) and math.isfinite(b) and 0 < a < b):
                raise DistributionRejected(
                    f"uniform support must satisfy 0 < a < b, got ({a}, {b})")
        elif self.kind == "lognormal":
            mu, sigma = self.params
            if not (math.isfinite(mu) and math.isfinite(sigma) and sigma > 0):
                raise DistributionRejected(f"lognormal needs finite mu, sigma > 0, got ({mu}, {sigma})")
            if not (0 < self.cap_quantile < 1):
                raise DistributionRejected(
                    f"lognormal cap quantile must lie in (0, 1), got {self.cap_quantile}")
        else:
            raise DistributionRejected(f"unknown distribution kind {self.kind!r}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        self.validate()
        if self.kind == "exponential":
            return rng.exponential(scale=1.0 / self.params[0], size=size)
        if self.kind == "uniform":
            a, b = self.params
            return rng.uniform(a, b, size=size)
        from scipy.special import ndtri
        mu, sigma = self.params
        u = rng.uniform(0.0, self.cap_quantile, size=size)
        return np.exp(mu + sigma * ndtri(u))

    def describe(self) -> str:
        if self.kind == "lognormal":
            return f"lognormal{self.params}@{self.cap_quantile}"
        return f"{self.kind}{self.params}"


@dataclass
class PassageTimeField:
    """One weight per edge of the graph, aligned with graph.edges."""

    weights: np.ndarray
    lineage: tuple | None = None

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.size and not np.all(self.weights > 0):
            raise ValueError("passage times must be strictly positive")


@dataclass
class Geodesic:
    """Vertex path in the giant component realizing T(q0, qn)."""

    vertices: np.ndarray
    total_time: float
    points: np.ndarray

    @property
    def polyline(self) -> np.ndarray:
        return self.points

    def recompute_total(self, graph: GeometricGraph, field: PassageTimeField) -> float:
        """Edge-weight sum along the path, for consistency checks."""
        total = 0.0
        for a, b in zip(self.vertices[:-1], self.vertices[1:]):
            eid = _edge_id(graph, int(a), int(b))
            total += float(field.weights[eid])
        return total


@dataclass
class GrowthSet:
    """Giant vertices reached within time t from the center vertex."""

    threshold: float
    center: int
    members: np.ndarray
    inner_radius: float
    outer_radius: float


@dataclass
class FirstPassageResult:
    """Single-source passage times with canonical predecessors."""

    graph: GeometricGraph
    labeling: ComponentLabeling
    source: int
    times: np.ndarray
    predecessors: np.ndarray

    def path_to(self, v: int) -> np.ndarray:
        """Vertex path source -> v along canonical predecessors."""
        if not np.isfinite(self.times[v]):
            raise ValueError(f"vertex {v} is not reachable from the source")
        out = [int(v)]
        while out[-1] != self.source:
            out.append(int(self.predecessors[out[-1]]))
        return np.array(out[::-1], dtype=np.int64)


def _edge_id(graph: GeometricGraph, u: int, v: int) -> int:
    lo, hi = graph.indptr[u], graph.indptr[u + 1]
    k = np.searchsorted(graph.indices[lo:hi], v)
    if k >= hi - lo or graph.indices[lo + k] != v:
        raise KeyError(f"no edge {{{u}, {v}}}")
    return int(graph.edge_ids[lo + k])


def sample_weights(graph: GeometricGraph, dist: PassageDistribution,
                   rng: np.random.Generator, lineage: tuple | None = None) -> PassageTimeField:
    """I.i.d. weights, one per edge, in canonical edge order."""
    dist.validate()
    return PassageTimeField(dist.sample(rng, graph.m), lineage=lineage)


def canonical_predecessors_csr(indptr: np.ndarray, indices: np.ndarray,
                               entry_weights: np.ndarray, dist_arr: np.ndarray,
                               source: int) -> np.ndarray:
    """Smallest-id predecessor attaining dist[u] + w == dist[v], per vertex.

    Equality is exact: Dijkstra set dist[v] through some incoming edge as
    dist[u] + w, so at least one edge attains it bit-for-bit; rescanning all
    edges makes the choice independent of heap pop order.
    """
    n = len(indptr) - 1
    pred = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return pred
    src = np.repeat(np.arange(n, dtype=indices.dtype), np.diff(indptr))
    dst = indices
    ok = np.isfinite(dist_arr[src]) & (dist_arr[src] + entry_weights == dist_arr[dst]) \
        & (dst != source)
    sentinel = np.full(n, n, dtype=np.int64)
    np.minimum.at(sentinel, dst[ok], src[ok])
    found = sentinel < n
    pred[found] = sentinel[found]
    return pred


def canonical_predecessors(graph: GeometricGraph, field: PassageTimeField,
                           dist_arr: np.ndarray, source: int) -> np.ndarray:
    """Canonical predecessor array over the base graph."""
    return canonical_predecessors_csr(graph.indptr, graph.indices,
                                      field.weights[graph.edge_ids], dist_arr, source)


def fpt_all_from(graph: GeometricGraph, field: PassageTimeField, x,
                 labeling: ComponentLabeling | None = None) -> FirstPassageResult:
    """Exact single-source passage times from q(x) over the giant component."""
    if labeling is None:
        labeling = components(graph)
    source = closest_vertex_q(graph, labeling, x)
    dist_arr = dijkstra(graph.csr_matrix(field.weights), directed=False, indices=source)
    # off-giant vertices are unreachable from a giant source by construction
    pred = canonical_predecessors(graph, field, dist_arr, source)
    return FirstPassageResult(graph, labeling, source, dist_arr, pred)


def fpt_values_from(graph: GeometricGraph, field: PassageTimeField, x,
                    labeling: ComponentLabeling | None = None) -> tuple[int, np.ndarray]:
    """Passage times from q(x) without the predecessor pass.

    Measurement sweeps that only read values (tier means, variances, tails,
    growth sets) use this to skip the per-edge predecessor scan.
    """
    if labeling is None:
        labeling = components(graph)
    source = closest_vertex_q(graph, labeling, x)
    dist_arr = dijkstra(graph.csr_matrix(field.weights), directed=False, indices=source)
    return source, dist_arr


def first_passage_time(graph: GeometricGraph, field: PassageTimeField, x, y,
                       labeling: ComponentLabeling | None = None) -> tuple[float, Geodesic]:
    """T(x, y) = T(q(x), q(y)) plus one minimizing path."""
    if labeling is None:
        labeling = components(graph)
    res = fpt_all_from(graph, field, x, labeling)
    target = closest_vertex_q(graph, labeling, y)
    verts = res.path_to(target)
    total = float(res.times[target])
    geo = Geodesic(vertices=verts, total_time=total, points=graph.cloud.points[verts])
    return total, geo


def growth_set(graph: GeometricGraph, labeling: ComponentLabeling,
               times: np.ndarray, t: float, center: int) -> GrowthSet:
    """Giant vertices v with T(center, v) <= t, plus inner/outer radii.

    outer_radius is the largest Euclidean distance from the center to a
    member. inner_radius is the distance to the nearest giant non-member
    (every giant vertex strictly inside that open ball is a member), clipped
    to outer_radius so inner <= outer holds even when the set has voids
    beyond its outermost member; with no non-member it equals outer_radius.
    """
    giant_ids = labeling.giant_vertices()
    member_mask = times[giant_ids] <= t
    members = giant_ids[member_mask]
    pts = graph.cloud.points
    center_pt = pts[center]
    if len(members) == 0:
        return GrowthSet(float(t), int(center), members, 0.0, 0.0)
    dists = np.sqrt(((pts[members] - center_pt) ** 2).sum(axis=1))
    outer = float(dists.max())
    non_members = giant_ids[~member_mask]
    if len(non_members) == 0:
        inner = outer
    else:
        nm = np.sqrt(((pts[non_members] - center_pt) ** 2).sum(axis=1))
        inner = min(float(nm.min()), outer)
    return GrowthSet(float(t), int(center), members, inner, outer)


def save_geodesic_csv(geodesic: Geodesic, path) -> None:
    """Polyline rows: vertex id then its coordinates."""
    import csv
    d = geodesic.points.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vertex"] + [f"x{k}" for k in range(d)])
        for vid, row in zip(geodesic.vertices, geodesic.points):
            writer.writerow([int(vid)] + [repr(float(c)) for c in row])
