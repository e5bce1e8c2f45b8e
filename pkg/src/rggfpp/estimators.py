"""Estimators for the model's asymptotic quantities.

Each experiment follows the same shape: a pure per-replica worker draws one
point cloud and one weight field, measures, and returns plain rows; a driver
pools the rows in a deterministic order keyed by (tier, replica) and fits.
Exponent fits over tier aggregates refuse designs with fewer than four
distinct abscissae unless the caller explicitly lowers the floor for a
deliberate three-tier design, and every fit reports its R^2 and sample count.

A config object here is anything exposing the model fields: d, side,
intensity, radius, distribution, master_seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from . import fpp
from .geometry import BoxDomain, GeometricGraph, build_rgg, sample_ppp
from .percolation import ComponentLabeling, closest_vertex_q, components
from .rng import BOOTSTRAP, DIRECTIONS, POINTS, SAMPLING, WEIGHTS, derive_rng


# ---------------------------------------------------------------- fitting


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    n: int


def _least_squares(x: np.ndarray, y: np.ndarray) -> FitResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        raise ValueError(f"a line fit needs >= 2 points, got {len(x)}")
    xm = x - x.mean()
    denom = float((xm ** 2).sum())
    if denom == 0.0:
        raise ValueError("a line fit needs spread in the abscissa")
    slope = float((xm * (y - y.mean())).sum() / denom)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss_res = float((resid ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot > 0.0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    return FitResult(slope, intercept, r2, len(x))


def loglog_fit(x, y, min_distinct: int = 4) -> FitResult:
    """Least-squares slope of log y against log x.

    Nonpositive or non-finite pairs are dropped before taking logs. Fewer
    than min_distinct distinct abscissae do not constrain an exponent and
    are refused.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    distinct = np.unique(x[keep])
    if len(distinct) < min_distinct:
        raise ValueError(
            f"exponent fit needs >= {min_distinct} distinct abscissae, "
            f"got {len(distinct)}")
    return _least_squares(np.log(x[keep]), np.log(y[keep]))


def semilog_fit(x, y, min_points: int = 8) -> FitResult:
    """Least-squares slope of log y against x, for exponential-decay data."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = np.isfinite(x) & np.isfinite(y) & (y > 0)
    if int(keep.sum()) < min_points:
        raise ValueError(
            f"decay fit needs >= {min_points} usable points, got {int(keep.sum())}")
    return _least_squares(x[keep], np.log(y[keep]))


# ------------------------------------------------------------ replica model


def build_replica(config, replica: int) -> tuple[GeometricGraph, fpp.PassageTimeField,
                                                 ComponentLabeling]:
    """One model draw: cloud, graph, weights, labeling.

    Point positions and edge weights come from disjoint substreams of
    (master_seed, replica), so measurements that only re-randomize one of the
    two can hold the other fixed.
    """
    domain = BoxDomain(config.d, config.side)
    cloud = sample_ppp(domain, config.intensity,
                       derive_rng(config.master_seed, replica, POINTS))
    graph = build_rgg(cloud, config.radius)
    field = fpp.sample_weights(graph, config.distribution,
                               derive_rng(config.master_seed, replica, WEIGHTS))
    return graph, field, components(graph)


def random_directions(rng: np.random.Generator, count: int, d: int) -> np.ndarray:
    """Uniform unit vectors; degenerate normal draws are redrawn."""
    v = rng.normal(size=(count, d))
    norms = np.sqrt((v ** 2).sum(axis=1))
    while True:
        bad = norms < 1e-12
        if not bad.any():
            break
        v[bad] = rng.normal(size=(int(bad.sum()), d))
        norms = np.sqrt((v ** 2).sum(axis=1))
    return v / norms[:, None]


def map_replicas(worker, args_list, jobs: int = 1) -> list:
    """Run a worker over per-replica argument tuples, results in input order."""
    if jobs <= 1:
        return [worker(a) for a in args_list]
    with get_context("fork").Pool(processes=jobs) as pool:
        return pool.map(worker, args_list)


def _check_tiers(norms, side: float) -> list[float]:
    out = sorted(float(v) for v in norms)
    if not out:
        raise ValueError("at least one distance tier is required")
    if out[0] <= 0:
        raise ValueError(f"distance tiers must be positive, got {out[0]}")
    if out[-1] > side / 3.0 + 1e-9:
        raise ValueError(
            f"tier {out[-1]} exceeds side/3 = {side / 3.0}; geodesics would "
            "feel the boundary")
    return out


# ------------------------------------------------- passage-time samples


def _passage_samples_worker(args):
    config, replica, norms, n_directions = args
    graph, field, labeling = build_replica(config, replica)
    _, times = fpp.fpt_values_from(graph, field, np.zeros(config.d), labeling)
    dirs = random_directions(derive_rng(config.master_seed, replica, DIRECTIONS),
                             n_directions, config.d)
    pts = graph.cloud.points
    rows = []
    for j, u in enumerate(dirs):
        for norm in norms:
            x = norm * u
            q_x = closest_vertex_q(graph, labeling, x)
            disp = float(np.sqrt(((pts[q_x] - x) ** 2).sum()))
            rows.append((replica, j, float(norm), float(times[q_x]), disp))
    return rows


def passage_samples(config, norms, replicas: int, n_directions: int = 4,
                    jobs: int = 1) -> list[tuple]:
    """Pooled samples of T(x) at each ||x|| tier.

    One graph and one source sweep per replica serve every tier and
    direction; directions are pooled by isotropy. Rows are
    (replica, direction, norm, T, q_displacement) ordered by (norm, replica,
    direction).
    """
    norms = _check_tiers(norms, config.side)
    args = [(config, i, norms, int(n_directions)) for i in range(int(replicas))]
    chunks = map_replicas(_passage_samples_worker, args, jobs)
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    return rows


def samples_by_tier(rows) -> dict[float, np.ndarray]:
    out: dict[float, list[float]] = {}
    for r in rows:
        out.setdefault(float(r[2]), []).append(float(r[3]))
    return {k: np.asarray(v, dtype=np.float64) for k, v in sorted(out.items())}


# ------------------------------------------------------------ time constant


@dataclass(frozen=True)
class PhiEstimate:
    """Point estimate of the linear-growth rate of passage times.

    estimate is the mean of ||x||/T(x) at the largest tier; the CI is a
    replica-level bootstrap, widened to contain the point estimate when
    resampling noise leaves it just outside. tier_stats rows are
    (norm, mean_T, var_T, n, mean_ratio, se_ratio) with ratio = T/||x||.
    band_constant is the smallest C >= 0 with
    mean_T * estimate / norm <= 1 + C log(norm)/sqrt(norm) at every tier.
    """
    estimate: float
    ci_low: float
    ci_high: float
    n: int
    tier_stats: tuple
    band_constant: float
    fit: FitResult | None
    top_drift_sigmas: float

    def summary(self) -> dict:
        return {
            "estimate": self.estimate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "fit_slope": None if self.fit is None else self.fit.slope,
            "r_squared": None if self.fit is None else self.fit.r_squared,
            "n": self.n,
            "band_constant": self.band_constant,
            "top_drift_sigmas": self.top_drift_sigmas,
        }


def phi_from_samples(rows, master_seed: int, bootstrap: int = 1000) -> PhiEstimate:
    """Aggregate passage_samples rows into a PhiEstimate."""
    rep = np.array([r[0] for r in rows], dtype=np.int64)
    norm = np.array([r[2] for r in rows], dtype=np.float64)
    t_val = np.array([r[3] for r in rows], dtype=np.float64)
    if np.any(t_val <= 0):
        raise ValueError("passage samples must be positive; is a tier at the source?")
    tiers = np.unique(norm)

    stats = []
    for v in tiers:
        sel = t_val[norm == v]
        n_v = len(sel)
        mean_t = float(sel.mean())
        var_t = float(sel.var(ddof=1)) if n_v > 1 else 0.0
        mean_ratio = mean_t / v
        se_ratio = math.sqrt(var_t / n_v) / v if n_v > 1 else 0.0
        stats.append((float(v), mean_t, var_t, n_v, mean_ratio, se_ratio))

    top = float(tiers[-1])
    top_sel = norm == top
    ratios = top / t_val[top_sel]
    estimate = float(ratios.mean())

    # bootstrap resamples whole replicas; directions within one share a graph
    reps = rep[top_sel]
    uniq = np.unique(reps)
    rng = derive_rng(master_seed, 0, BOOTSTRAP)
    order = np.argsort(reps, kind="stable")
    sorted_reps = reps[order]
    starts = np.searchsorted(sorted_reps, uniq, side="left")
    stops = np.searchsorted(sorted_reps, uniq, side="right")
    means = np.empty(int(bootstrap))
    for b in range(int(bootstrap)):
        pick = rng.integers(0, len(uniq), size=len(uniq))
        idx = np.concatenate([order[starts[p]:stops[p]] for p in pick])
        means[b] = ratios[idx].mean()
    lo, hi = np.quantile(means, [0.025, 0.975])
    ci_low = min(float(lo), estimate)
    ci_high = max(float(hi), estimate)

    band_c = 0.0
    for v, mean_t, _, _, _, _ in stats:
        if v > 1.0:
            excess = mean_t * estimate / v - 1.0
            band_c = max(band_c, excess / (math.log(v) / math.sqrt(v)))
    band_c = max(band_c, 0.0)

    fit = None
    if len(tiers) >= 4:
        fit = loglog_fit([s[0] for s in stats], [s[1] for s in stats])

    drift = float("nan")
    if len(stats) >= 2:
        (_, _, _, _, m1, se1), (_, _, _, _, m2, se2) = stats[-2], stats[-1]
        pooled = math.sqrt(se1 ** 2 + se2 ** 2)
        drift = abs(m2 - m1) / pooled if pooled > 0 else float("inf")

    if not estimate > 0:
        raise AssertionError(f"growth-rate estimate must be positive, got {estimate}")
    return PhiEstimate(estimate, ci_low, ci_high, int(top_sel.sum()),
                       tuple(stats), band_c, fit, drift)


def estimate_phi(config, distances, replicas: int, n_directions: int = 4,
                 jobs: int = 1, bootstrap: int = 1000) -> PhiEstimate:
    """Time-constant estimate from fresh replicas at the given tiers."""
    if int(replicas) < 10:
        raise ValueError(f"insufficient replicas for estimation: {replicas} < 10")
    rows = passage_samples(config, distances, replicas, n_directions, jobs)
    return phi_from_samples(rows, config.master_seed, bootstrap)


# --------------------------------------------------------- variance scaling


@dataclass(frozen=True)
class VarianceScaling:
    rows: tuple            # (norm, var_T, var over norm*log(norm), n)
    fit: FitResult         # log var against log norm
    ratio_spread: float    # max/min of the normalized column

    def summary(self) -> dict:
        return {
            "estimate": self.fit.slope,
            "ci_low": None,
            "ci_high": None,
            "fit_slope": self.fit.slope,
            "r_squared": self.fit.r_squared,
            "n": int(sum(r[3] for r in self.rows)),
            "ratio_spread": self.ratio_spread,
        }


def variance_scaling(samples) -> VarianceScaling:
    """Per-tier variance table and the fitted growth exponent.

    samples is either a mapping norm -> array of T values or a
    passage_samples row list. Needs >= 4 tiers with >= 100 values each, and
    tiers above 1 so the log factor in the normalization is positive.
    """
    if not isinstance(samples, dict):
        samples = samples_by_tier(samples)
    tiers = sorted(samples)
    if len(tiers) < 4:
        raise ValueError(f"variance scaling needs >= 4 tiers, got {len(tiers)}")
    rows = []
    for v in tiers:
        sel = np.asarray(samples[v], dtype=np.float64)
        if len(sel) < 100:
            raise ValueError(
                f"variance scaling needs >= 100 samples per tier, tier {v} has {len(sel)}")
        if v <= 1.0:
            raise ValueError(f"tiers must exceed 1 for the log factor, got {v}")
        var = float(sel.var(ddof=1))
        rows.append((float(v), var, var / (v * math.log(v)), len(sel)))
    fit = loglog_fit([r[0] for r in rows], [r[1] for r in rows])
    ratios = [r[2] for r in rows]
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else float("inf")
    return VarianceScaling(tuple(rows), fit, spread)


# ------------------------------------------------------------ tail behavior


@dataclass(frozen=True)
class TailCurve:
    """Empirical survival of the deviation scale |T - mean| / sqrt(norm)."""
    norm: float
    ell: np.ndarray
    survival: np.ndarray
    window: tuple
    fit: FitResult
    n: int

    def survival_at(self, value: float) -> float:
        return float((self.ell > value).mean())

    def summary(self) -> dict:
        return {
            "estimate": self.fit.slope,
            "ci_low": None,
            "ci_high": None,
            "fit_slope": self.fit.slope,
            "r_squared": self.fit.r_squared,
            "n": self.n,
            "window_low": self.window[0],
            "window_high": self.window[1],
        }


def moderate_tail(samples, norm: float,
                  window_quantiles: tuple[float, float] = (0.1, 0.95)) -> TailCurve:
    """Survival curve of the centered, sqrt-normalized passage time.

    The decay theory holds on a window whose lower end involves an unknown
    constant times log(norm); the default floor is the 10th percentile of
    the observed scale. The ceiling is the given quantile capped at
    sqrt(norm), the upper end of the theoretical window.
    """
    t_val = np.asarray(samples, dtype=np.float64)
    if len(t_val) < 1000:
        raise ValueError(f"tail estimation needs >= 1000 samples, got {len(t_val)}")
    ell = np.sort(np.abs(t_val - t_val.mean()) / math.sqrt(float(norm)))
    n = len(ell)
    survival = 1.0 - np.arange(1, n + 1, dtype=np.float64) / n
    lo = float(np.quantile(ell, window_quantiles[0]))
    hi = min(float(np.quantile(ell, window_quantiles[1])), math.sqrt(float(norm)))
    in_window = (ell >= lo) & (ell <= hi) & (survival > 0)
    fit = semilog_fit(ell[in_window], survival[in_window])
    return TailCurve(float(norm), ell, survival, (lo, hi), fit, n)


# ---------------------------------------------------------------- shape band


def _shape_worker(args):
    config, replica, thresholds, phi = args
    graph, field, labeling = build_replica(config, replica)
    source, times = fpp.fpt_values_from(graph, field, np.zeros(config.d), labeling)
    src_disp = float(np.sqrt((graph.cloud.points[source] ** 2).sum()))
    rows = []
    for t in thresholds:
        gs = fpp.growth_set(graph, labeling, times, t, source)
        target = phi * t
        delta_out = gs.outer_radius / target - 1.0
        delta_in = 1.0 - gs.inner_radius / target
        max_dev = max(abs(delta_out), abs(delta_in))
        rows.append((replica, float(t), gs.inner_radius, gs.outer_radius,
                     delta_in, delta_out, max_dev, src_disp))
    return rows


@dataclass(frozen=True)
class ShapeBand:
    phi: float
    rows: tuple          # (replica, t, inner, outer, delta_in, delta_out, max_dev, q_displacement)
    tier_medians: tuple  # (t, median max_dev)
    fit: FitResult

    def summary(self) -> dict:
        return {
            "estimate": self.fit.slope,
            "ci_low": None,
            "ci_high": None,
            "fit_slope": self.fit.slope,
            "r_squared": self.fit.r_squared,
            "n": len(self.rows),
            "phi": self.phi,
        }


def shape_from_rows(rows, phi: float, min_distinct: int = 4) -> ShapeBand:
    """Aggregate shape worker rows: per-threshold medians plus the decay fit."""
    rows = sorted(rows, key=lambda r: (r[1], r[0]))
    thresholds = sorted({r[1] for r in rows})
    medians = []
    for t in thresholds:
        devs = [r[6] for r in rows if r[1] == t]
        medians.append((t, float(np.median(devs))))
    fit = loglog_fit([m[0] for m in medians], [m[1] for m in medians],
                     min_distinct=min_distinct)
    return ShapeBand(float(phi), tuple(rows), tuple(medians), fit)


def check_shape_inputs(config, phi: float, thresholds) -> list[float]:
    if not (phi > 0):
        raise ValueError(f"a positive growth rate is required, got {phi}")
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds or thresholds[0] <= 0:
        raise ValueError("thresholds must be positive")
    if phi * thresholds[-1] > config.side / 4.0 + 1e-9:
        raise ValueError(
            f"phi*t = {phi * thresholds[-1]} exceeds side/4; the target "
            "sphere would leave the reliable region")
    return thresholds


def shape_band(config, phi: float, thresholds, replicas: int, jobs: int = 1,
               min_distinct: int = 4) -> ShapeBand:
    """Growth-set deviation from the ball of radius phi*t, per threshold.

    The fitted slope is log(median max deviation) against log t. A
    deliberate three-tier design must pass min_distinct=3 explicitly.
    """
    thresholds = check_shape_inputs(config, phi, thresholds)
    args = [(config, i, thresholds, float(phi)) for i in range(int(replicas))]
    chunks = map_replicas(_shape_worker, args, jobs)
    rows = [r for chunk in chunks for r in chunk]
    return shape_from_rows(rows, phi, min_distinct)


# ------------------------------------------------------------------ wander


@dataclass(frozen=True)
class WanderRecord:
    x: np.ndarray
    y: np.ndarray
    hausdorff: float
    norm: float


def _points_to_segment(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float((ab ** 2).sum())
    if denom == 0.0:
        return np.sqrt(((pts - a) ** 2).sum(axis=1))
    s = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    proj = a + s[:, None] * ab
    return np.sqrt(((pts - proj) ** 2).sum(axis=1))


def _points_to_polyline(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    if len(poly) == 1:
        return np.sqrt(((pts - poly[0]) ** 2).sum(axis=1))
    a = poly[:-1]
    e = poly[1:] - poly[:-1]
    denom = (e ** 2).sum(axis=1)
    denom = np.where(denom == 0.0, 1.0, denom)
    diff = pts[:, None, :] - a[None, :, :]
    s = np.clip((diff * e).sum(axis=-1) / denom, 0.0, 1.0)
    proj = a[None, :, :] + s[..., None] * e[None, :, :]
    return np.sqrt(((pts[:, None, :] - proj) ** 2).sum(axis=-1)).min(axis=1)


def hausdorff_to_segment(poly: np.ndarray, a, b, pitch: float) -> float:
    """Two-sided Hausdorff distance between a polyline and the segment ab.

    One side takes polyline vertices to the segment exactly; the other
    samples the segment at the pitch (endpoints included) against the full
    polyline, edges and all. The discretization error is below the pitch.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (pitch > 0):
        raise ValueError(f"sampling pitch must be positive, got {pitch}")
    side_one = float(_points_to_segment(poly, a, b).max())
    length = float(np.sqrt(((b - a) ** 2).sum()))
    count = max(2, int(math.ceil(length / pitch)) + 1)
    s = np.linspace(0.0, 1.0, count)
    samples = a + s[:, None] * (b - a)
    side_two = float(_points_to_polyline(samples, poly).max())
    return max(side_one, side_two)


def _wander_worker(args):
    config, replica, norms, n_directions = args
    graph, field, labeling = build_replica(config, replica)
    res = fpp.fpt_all_from(graph, field, np.zeros(config.d), labeling)
    dirs = random_directions(derive_rng(config.master_seed, replica, DIRECTIONS),
                             n_directions, config.d)
    pitch = config.radius / 4.0
    origin = np.zeros(config.d)
    rows = []
    for j, u in enumerate(dirs):
        for norm in norms:
            y = norm * u
            q_y = closest_vertex_q(graph, labeling, y)
            poly = graph.cloud.points[res.path_to(q_y)]
            dh = hausdorff_to_segment(poly, origin, y, pitch)
            rows.append((replica, j, float(norm), dh) + tuple(float(c) for c in y))
    return rows


@dataclass(frozen=True)
class WanderScaling:
    records: tuple[WanderRecord, ...]
    fit: FitResult
    exponent_ceiling: float
    violation_fraction_top: float

    def summary(self) -> dict:
        return {
            "estimate": self.fit.slope,
            "ci_low": None,
            "ci_high": None,
            "fit_slope": self.fit.slope,
            "r_squared": self.fit.r_squared,
            "n": len(self.records),
            "exponent_ceiling": self.exponent_ceiling,
            "violation_fraction_top": self.violation_fraction_top,
        }


def wander_from_rows(rows, d: int, epsilon: float = 0.1,
                     min_distinct: int = 4) -> WanderScaling:
    """Aggregate wander worker rows into records, fit, and violation share."""
    if not (0 < epsilon < 0.25):
        raise ValueError(f"epsilon must sit in (0, 1/4), got {epsilon}")
    ceiling = 0.75 + epsilon
    rows = sorted(rows, key=lambda r: (r[2], r[0], r[1]))
    origin = np.zeros(d)
    records = tuple(
        WanderRecord(origin, np.array(r[4:], dtype=np.float64), r[3], r[2])
        for r in rows)
    fit = loglog_fit([r.norm for r in records], [r.hausdorff for r in records],
                     min_distinct=min_distinct)
    top = max(r.norm for r in records)
    top_recs = [r for r in records if r.norm == top]
    frac = float(np.mean([r.hausdorff > r.norm ** ceiling for r in top_recs]))
    return WanderScaling(records, fit, ceiling, frac)


def geodesic_wander(config, norms, replicas: int, n_directions: int = 4,
                    jobs: int = 1, epsilon: float = 0.1,
                    min_distinct: int = 4) -> WanderScaling:
    """Hausdorff wander of geodesics against the straight segment.

    Fits log d_H against log ||y - x|| over every record and reports the
    fraction of top-tier records breaking d_H <= ||y - x||^(3/4 + epsilon).
    """
    norms = _check_tiers(norms, config.side)
    args = [(config, i, norms, int(n_directions)) for i in range(int(replicas))]
    chunks = map_replicas(_wander_worker, args, jobs)
    rows = [r for chunk in chunks for r in chunk]
    return wander_from_rows(rows, config.d, epsilon, min_distinct)


# ------------------------------------------------------------ geodesic tree


def _gather_ragged(indptr: np.ndarray, data: np.ndarray,
                   nodes: np.ndarray) -> np.ndarray:
    starts = indptr[nodes]
    cnt = indptr[nodes + 1] - starts
    total = int(cnt.sum())
    if total == 0:
        return data[:0]
    base = np.repeat(starts, cnt)
    offsets = np.concatenate(([0], np.cumsum(cnt)[:-1]))
    within = np.arange(total, dtype=np.int64) - np.repeat(offsets, cnt)
    return data[base + within]


@dataclass
class GeodesicTree:
    """Single-source shortest-path tree over the giant component."""
    graph: GeometricGraph
    labeling: ComponentLabeling
    root: np.ndarray
    source: int
    times: np.ndarray
    pred: np.ndarray
    children_indptr: np.ndarray
    children_ids: np.ndarray

    def children(self, v: int) -> np.ndarray:
        return self.children_ids[self.children_indptr[v]:self.children_indptr[v + 1]]

    def subtree(self, v: int) -> np.ndarray:
        """All vertices whose tree path runs through v, v included."""
        out = [np.array([v], dtype=np.int64)]
        frontier = out[0]
        while len(frontier):
            frontier = _gather_ragged(self.children_indptr, self.children_ids, frontier)
            if len(frontier):
                out.append(frontier)
        return np.concatenate(out)

    def leaf_mask(self) -> np.ndarray:
        counts = np.diff(self.children_indptr)
        reachable = np.isfinite(self.times)
        return (counts == 0) & reachable


def grow_tree(graph: GeometricGraph, field: fpp.PassageTimeField,
              labeling: ComponentLabeling, root) -> GeodesicTree:
    root = np.asarray(root, dtype=np.float64).reshape(graph.cloud.domain.d)
    res = fpp.fpt_all_from(graph, field, root, labeling)
    n = graph.n
    # the source and off-giant vertices carry the -1 sentinel: no parent
    has_pred = np.flatnonzero(res.predecessors >= 0)
    parents = res.predecessors[has_pred]
    order = np.argsort(parents, kind="stable")
    counts = np.bincount(parents, minlength=n)
    indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    return GeodesicTree(graph, labeling, root, res.source, res.times,
                        res.predecessors, indptr, has_pred[order])


@dataclass(frozen=True)
class ConeRecord:
    root: np.ndarray
    through: int
    downstream: int
    angle: float


def angle_between(a, b) -> float:
    """Angle via the clamped cosine; arguments must be nonzero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.sqrt((a ** 2).sum()))
    nb = float(np.sqrt((b ** 2).sum()))
    if na == 0.0 or nb == 0.0:
        raise ValueError("angles need nonzero vectors")
    return float(np.arccos(np.clip(a @ b / (na * nb), -1.0, 1.0)))


def cone_cutoff(exponent: float) -> float:
    """Smallest through-vertex radius where the cone check is meaningful.

    The check below this radius is vacuous or inverted; the exponent is
    -1/4 + eps, and the threshold is 3 raised to 1/(1/4 - eps/2).
    """
    eps = exponent + 0.25
    if not (0 < eps < 0.25):
        raise ValueError(f"cone exponent must sit in (-1/4, 0), got {exponent}")
    psi = 0.25 - eps / 2.0
    return 3.0 ** (1.0 / psi)


@dataclass(frozen=True)
class TreeStraightness:
    cutoff: float
    scan_radius: float
    exponent: float
    through_rows: tuple   # (u, norm_u, bound, max_angle, worst_downstream, subtree_size)
    records: tuple[ConeRecord, ...]
    violations: tuple
    violation_radius: float


def cone_scan(tree: GeodesicTree, scan_radius: float, exponent: float = -0.2,
              rng: np.random.Generator | None = None,
              max_through: int = 256) -> TreeStraightness:
    """Cone angles of downstream vertices seen from sampled through-vertices.

    For each sampled u with cutoff <= ||u - root|| <= scan_radius, the scan
    takes the largest angle between u - root and q - root over the whole
    subtree below u, and compares it against ||u - root||^exponent. Only the
    binding record per u is kept.
    """
    cutoff = cone_cutoff(exponent)
    pts = tree.graph.cloud.points
    rel = pts - tree.root
    norms = np.sqrt((rel ** 2).sum(axis=1))
    reachable = np.isfinite(tree.times)
    eligible = np.flatnonzero(reachable & (norms >= cutoff) & (norms <= scan_radius))
    if len(eligible) > max_through:
        if rng is None:
            raise ValueError("sampling the through-vertices needs an rng")
        eligible = eligible[rng.choice(len(eligible), size=max_through, replace=False)]
    eligible = np.sort(eligible)

    rows = []
    records = []
    violations = []
    v_radius = 0.0
    for u in eligible:
        u = int(u)
        a = rel[u]
        sub = tree.subtree(u)
        sub = sub[sub != u]
        bound = float(norms[u] ** exponent)
        if len(sub) == 0:
            rows.append((u, float(norms[u]), bound, 0.0, -1, 0))
            continue
        b = rel[sub]
        bn = norms[sub]
        keep = bn > 0
        sub, b, bn = sub[keep], b[keep], bn[keep]
        if len(sub) == 0:
            rows.append((u, float(norms[u]), bound, 0.0, -1, 0))
            continue
        ang = np.arccos(np.clip(b @ a / (bn * norms[u]), -1.0, 1.0))
        k = int(np.argmax(ang))
        max_angle = float(ang[k])
        worst = int(sub[k])
        rows.append((u, float(norms[u]), bound, max_angle, worst, len(sub)))
        records.append(ConeRecord(tree.root, u, worst, max_angle))
        if max_angle > bound:
            violations.append(u)
            v_radius = max(v_radius, float(norms[u]))
    return TreeStraightness(cutoff, float(scan_radius), float(exponent),
                            tuple(rows), tuple(records), tuple(violations),
                            v_radius)


def geodesic_tree(config, root, replica: int = 0, scan_radius: float | None = None,
                  exponent: float = -0.2,
                  max_through: int = 256) -> tuple[GeodesicTree, TreeStraightness]:
    """Build one replica's geodesic tree and run the cone scan on it."""
    graph, field, labeling = build_replica(config, replica)
    tree = grow_tree(graph, field, labeling, root)
    if scan_radius is None:
        scan_radius = config.side / 4.0
    scan = cone_scan(tree, scan_radius, exponent,
                     derive_rng(config.master_seed, replica, SAMPLING), max_through)
    return tree, scan


def _tree_worker(args):
    config, replica, scan_radius, exponent, max_through = args
    graph, field, labeling = build_replica(config, replica)
    tree = grow_tree(graph, field, labeling, np.zeros(config.d))
    scan = cone_scan(tree, scan_radius, exponent,
                     derive_rng(config.master_seed, replica, SAMPLING), max_through)
    inner = scan_radius / 2.0
    stabilized = not any(
        norms_u > inner for u, norms_u, bound, max_angle, worst, size in scan.through_rows
        if u in scan.violations)
    rows = [(replica,) + r for r in scan.through_rows]
    return rows, stabilized, scan.violation_radius


@dataclass(frozen=True)
class TreeStabilization:
    rows: tuple              # (replica, u, norm_u, bound, max_angle, worst, subtree_size)
    stabilized: tuple        # per-replica flags, replica order
    violation_radii: tuple
    stabilized_fraction: float

    def summary(self) -> dict:
        return {
            "estimate": self.stabilized_fraction,
            "ci_low": None,
            "ci_high": None,
            "fit_slope": None,
            "r_squared": None,
            "n": len(self.rows),
            "replicas": len(self.stabilized),
        }


def stabilization_from_results(results) -> TreeStabilization:
    """Fold per-replica (rows, stabilized, violation_radius) triples."""
    rows = [r for chunk, _, _ in results for r in chunk]
    rows.sort(key=lambda r: (r[0], r[1]))
    flags = tuple(bool(s) for _, s, _ in results)
    radii = tuple(float(v) for _, _, v in results)
    return TreeStabilization(tuple(rows), flags, radii,
                             float(np.mean(flags)) if flags else float("nan"))


def check_tree_inputs(config, scan_radius: float | None,
                      exponent: float) -> float:
    if scan_radius is None:
        scan_radius = config.side / 4.0
    if scan_radius / 2.0 < cone_cutoff(exponent):
        raise ValueError(
            f"half the scan radius ({scan_radius / 2.0}) sits below the cone "
            f"cutoff {cone_cutoff(exponent):.2f}; widen the box or the scan")
    return float(scan_radius)


def tree_straightness(config, replicas: int, scan_radius: float | None = None,
                      exponent: float = -0.2, max_through: int = 256,
                      jobs: int = 1) -> TreeStabilization:
    """Cone scans across replicas with a stabilization tally.

    A replica counts as stabilized when widening the scan from half the
    radius to the full radius adds no violating through-vertex.
    """
    scan_radius = check_tree_inputs(config, scan_radius, exponent)
    args = [(config, i, scan_radius, float(exponent), int(max_through))
            for i in range(int(replicas))]
    chunks = map_replicas(_tree_worker, args, jobs)
    return stabilization_from_results(chunks)


# -------------------------------------------------------------- directions


@dataclass(frozen=True)
class RayRecord:
    root: np.ndarray
    direction: np.ndarray


@dataclass(frozen=True)
class RayFan:
    records: tuple[RayRecord, ...]
    gap: float
    band: tuple


def ray_directions(tree: GeodesicTree, band: tuple[float, float],
                   rng: np.random.Generator | None = None,
                   probe: int = 4096) -> RayFan:
    """Directions of tree leaves in an annulus, with a spread statistic.

    In the plane the statistic is the largest angular gap between
    consecutive directions (the full circle when fewer than two); in higher
    dimension it is a Monte Carlo covering radius over probe sphere points,
    which needs an rng.
    """
    lo, hi = float(band[0]), float(band[1])
    if not (0 <= lo < hi):
        raise ValueError(f"band must satisfy 0 <= lo < hi, got {band}")
    pts = tree.graph.cloud.points
    rel = pts - tree.root
    norms = np.sqrt((rel ** 2).sum(axis=1))
    mask = tree.leaf_mask() & (norms >= lo) & (norms <= hi)
    leaves = np.flatnonzero(mask)
    dirs = rel[leaves] / norms[leaves][:, None]
    records = tuple(RayRecord(tree.root, dirs[i].copy()) for i in range(len(leaves)))
    d = tree.graph.cloud.domain.d
    if len(leaves) < 2:
        gap = 2.0 * math.pi
    elif d == 2:
        ang = np.sort(np.arctan2(dirs[:, 1], dirs[:, 0]))
        gaps = np.diff(ang)
        wrap = 2.0 * math.pi - (ang[-1] - ang[0])
        gap = float(max(gaps.max(), wrap))
    else:
        if rng is None:
            raise ValueError("the covering statistic in d >= 3 needs an rng")
        probes = random_directions(rng, int(probe), d)
        cosines = np.clip(probes @ dirs.T, -1.0, 1.0)
        gap = float(np.arccos(cosines.max(axis=1)).max())
    return RayFan(records, gap, (lo, hi))
