"""Full-scale acceptance gate.

One test per acceptance criterion, cheap ones first. The two oracle
equivalence tests assert their wall-clock budgets; the statistical tests
report elapsed time but assert only the statistic (single-core wall time
varies with the machine). Every scale and seed here is frozen: the
statistical checks were calibrated at exactly these settings, and changing
any of them requires recalibrating.

Budget roughly an hour of single-core time for the whole file.
"""
import csv
import math
import time

import numpy as np
import pytest

from conftest import edge_weight_map, field_from_values, make_cloud, random_points
from oracles import (augmented_edges, augmented_vertices, brute_force_edge_array,
                     enumerate_min_path, enumerate_min_path_hops)
from rggfpp import estimators, fpp
from rggfpp.augmented import (BudgetInfeasible, build_augmented,
                              closest_vertex_t, lattice_only_path,
                              truncated_time)
from rggfpp.geometry import build_rgg
from rggfpp.percolation import closest_vertex_q, components
from rggfpp.harness import ExperimentConfig, run


def report(label: str, ok: bool, detail: str, seconds: float) -> None:
    print(f"{label}: {'PASS' if ok else 'FAIL'} {detail} ({seconds:.1f}s)",
          flush=True)


# ------------------------------------------------------------- oracle gates


def test_adjacency_matches_brute_force_at_scale():
    """1000 random clouds of up to 2000 points, exact edge sets, under 10 s."""
    rng = np.random.default_rng(1009)
    t0 = time.monotonic()
    total_edges = 0
    largest = 0
    for _ in range(1000):
        d = int(rng.integers(2, 4))
        n = int(round(math.exp(rng.uniform(math.log(2), math.log(2000)))))
        largest = max(largest, n)
        side = float(rng.uniform(10.0, 40.0))
        radius = float(rng.uniform(0.4, 2.5))
        pts = rng.uniform(-side / 2, side / 2, size=(n, d))
        g = build_rgg(make_cloud(pts, side), radius)
        assert np.array_equal(g.edges, brute_force_edge_array(pts, radius))
        total_edges += g.m
    dt = time.monotonic() - t0
    ok = dt < 10.0
    report("adjacency vs brute force", ok,
           f"1000 clouds, max n={largest}, {total_edges} edges", dt)
    assert ok, f"took {dt:.1f}s, budget 10s"


def _tiny_augmented(rng):
    """A fixture small enough to enumerate every bounded walk."""
    if rng.integers(2) == 0:
        side, spacing, kappa, radius = 1.5, 2.0, 1.5, 0.9
        n = int(rng.integers(1, 8))
    else:
        side, spacing, kappa, radius = 3.0, 1.5, 1.2, 0.9
        n = 1
    pts = rng.uniform(-side / 2, side / 2, size=(n, 2))
    g = build_rgg(make_cloud(pts, side), radius)
    w = rng.uniform(0.1, 2.0, size=g.m)
    aug = build_augmented(g, field_from_values(g, w), spacing, kappa)
    x = rng.uniform(-side / 2, side / 2, size=2)
    return aug, x


def _oracle_weight_map(aug):
    g = aug.graph
    out = augmented_edges(g.cloud.points, g.radius, g.cloud.domain.side,
                          aug.spacing, aug.kappa)
    for (u, v), w in edge_weight_map(g, aug.field).items():
        out[(u, v)] = w
    return out


def _oracle_origin(aug):
    _, zmax = augmented_vertices(aug.graph.cloud.points,
                                 aug.graph.cloud.domain.side, aug.spacing)
    width = 2 * zmax + 1
    rank = 0
    for _ in range(aug.d):
        rank = rank * width + zmax
    return aug.n_base + rank


def test_shortest_paths_match_enumeration_at_scale():
    """1000 fixtures: 500 plain Dijkstra vs all simple paths (<= 12 vertices),
    500 budgeted queries vs all bounded walks (<= 10 augmented vertices).
    Under 60 s."""
    rng = np.random.default_rng(2003)
    t0 = time.monotonic()
    for _ in range(500):
        n = int(rng.integers(2, 13))
        side = 10.0
        pts = random_points(rng, n, side)
        g = build_rgg(make_cloud(pts, side), 2.5)
        field = field_from_values(g, rng.uniform(0.1, 2.0, size=g.m))
        lab = components(g)
        res = fpp.fpt_all_from(g, field, [0.0, 0.0], lab)
        wmap = edge_weight_map(g, field)
        v = int(rng.integers(g.n))
        want, _ = enumerate_min_path(g.n, wmap, res.source, v)
        if math.isinf(want):
            assert math.isinf(res.times[v])
        else:
            assert res.times[v] == pytest.approx(want, rel=1e-12)
    for _ in range(500):
        aug, x = _tiny_augmented(rng)
        assert aug.n_total <= 10
        budget = int(rng.integers(0, 6))
        want, _ = enumerate_min_path_hops(aug.n_total, _oracle_weight_map(aug),
                                          _oracle_origin(aug),
                                          closest_vertex_t(aug, x), budget)
        if math.isinf(want):
            with pytest.raises(BudgetInfeasible):
                truncated_time(aug, x, budget)
        else:
            query = truncated_time(aug, x, budget)
            assert query.value == pytest.approx(want, rel=1e-12)
    dt = time.monotonic() - t0
    ok = dt < 60.0
    report("shortest paths vs enumeration", ok, "1000 fixtures exact", dt)
    assert ok, f"took {dt:.1f}s, budget 60s"


# ----------------------------------------------------------- harness gates


def test_reruns_and_parallelism_are_byte_identical(tmp_path):
    """Same config, fresh run and jobs=2 run: identical data CSVs and summary."""
    t0 = time.monotonic()
    base = dict(side=100.0, master_seed=11, tiers=(10.0, 20.0, 30.0),
                replicas=10, directions=2, bootstrap=200)
    outcomes = [
        run(ExperimentConfig(out_dir=str(tmp_path / name), jobs=jobs, **base), "phi")
        for name, jobs in (("first", 1), ("again", 1), ("forked", 2))
    ]
    assert all(o.exit_code == 0 for o in outcomes)
    blobs = []
    for o in outcomes:
        blobs.append({name: open(path, "rb").read()
                      for name, path in o.files.items()
                      if name != "manifest.json"})
    ok = blobs[0] == blobs[1] == blobs[2]
    dt = time.monotonic() - t0
    report("determinism", ok,
           "rerun and jobs=2 byte-identical on samples/tier_stats/summary", dt)
    assert ok


def test_structural_bounds_hold_on_experiment_runs(tmp_path):
    """The in-line structural assertions (lattice hop bound, budgeted-time
    ceiling, box-crossing bound, excursion weight bound) hold on a
    supercritical run and on a fragmented run that forces the layered DP
    and produces real excursions; plus a direct lattice-path sweep."""
    t0 = time.monotonic()
    dense = ExperimentConfig(out_dir=str(tmp_path / "dense"), side=50.0,
                             master_seed=41, replicas=3, tiers=(8.0, 12.0),
                             aug_spacings=(1.0, 2.0))
    # near-critical radius: the giant spans the box but has gaps, so optimal
    # witnesses ride it, bridge on the lattice, and re-enter -> excursions
    sparse = ExperimentConfig(out_dir=str(tmp_path / "sparse"), side=40.0,
                              master_seed=42, replicas=6, radius=1.3,
                              tiers=(8.0, 12.0), aug_spacings=(1.0, 1.5),
                              kappa=1.2, budget_factor=4.0)
    rows = []
    for config in (dense, sparse):
        outcome = run(config, "augmented-compare")
        assert outcome.exit_code == 0, outcome.errors
        with open(outcome.files["discrepancies.csv"], newline="") as fh:
            rows.extend(list(csv.DictReader(fh)))
    assert rows
    for r in rows:
        assert int(r["witness_hops"]) <= int(r["hop_budget"])
        assert int(r["box_crossings"]) <= float(r["box_bound"])
    excursions = sum(int(r["excursions_checked"]) for r in rows)
    assert excursions > 0, "no excursion was ever observed; the check is vacuous"

    # direct sweep of the forced lattice paths (hop bound asserted inside)
    rng = np.random.default_rng(43)
    pts = rng.uniform(-10.0, 10.0, size=(60, 2))
    g = build_rgg(make_cloud(pts, 20.0), 1.5)
    field = field_from_values(g, rng.uniform(0.1, 2.0, size=g.m))
    aug = build_augmented(g, field, 1.5, 2.0)
    for _ in range(200):
        u, v = (int(k) for k in rng.integers(aug.n_total, size=2))
        lattice_only_path(aug, u, v)
    dt = time.monotonic() - t0
    report("structural bounds", True,
           f"{len(rows)} discrepancy rows, {excursions} excursions checked, "
           "200 lattice paths", dt)


def test_hole_diameter_tracks_log_box_side(tmp_path):
    """Median largest-hole diameter over log side stays within 50% between
    adjacent box sides 200 -> 400 -> 800."""
    t0 = time.monotonic()
    # at the default radius 2.0 the giant covers the box so densely that no
    # hole clears the grid pitch at these sides; 1.4 is still supercritical
    # but leaves visible gaps, so the log-scaling constant is measurable
    config = ExperimentConfig(out_dir=str(tmp_path), master_seed=34, replicas=9,
                              radius=1.4, hole_sides=(200.0, 400.0, 800.0),
                              hole_resolution=0.25)
    outcome = run(config, "holes")
    assert outcome.exit_code == 0, outcome.errors
    med = outcome.summary["median_ratio_by_side"]
    ratios = [med["200"], med["400"], med["800"]]
    assert all(v is not None and v > 0 for v in ratios)
    jumps = [max(a, b) / min(a, b) for a, b in zip(ratios, ratios[1:])]
    ok = max(jumps) <= 1.5
    dt = time.monotonic() - t0
    report("hole scaling", ok,
           f"medians/log={['%.3f' % v for v in ratios]} adjacent x{max(jumps):.2f}",
           dt)
    assert ok, ratios


# ------------------------------------------------------- statistical gates

GROWTH_CONFIG = ExperimentConfig(side=600.0, master_seed=20260819)
GROWTH_TIERS = (40.0, 80.0, 120.0, 160.0, 200.0)


@pytest.fixture(scope="session")
def growth_samples():
    """One sample per tier per replica, 200 replicas, shared by the variance
    and shape gates (the growth rate is chained from these samples)."""
    return estimators.passage_samples(GROWTH_CONFIG, GROWTH_TIERS,
                                      replicas=200, n_directions=1)


def test_variance_grows_subquadratically_in_distance(growth_samples):
    """Fitted exponent of Var T vs distance at most 1.15, and the
    normalized column Var/(norm log norm) spread at most 5x."""
    t0 = time.monotonic()
    scaling = estimators.variance_scaling(growth_samples)
    slope = scaling.fit.slope
    spread = scaling.ratio_spread
    ok = slope <= 1.15 and spread <= 5.0
    dt = time.monotonic() - t0
    report("variance scaling", ok,
           f"slope={slope:.3f} (<=1.15) spread={spread:.2f} (<=5) "
           f"r2={scaling.fit.r_squared:.3f} n=1000", dt)
    assert ok, (slope, spread)


def test_reached_set_tightens_toward_the_limit_ball(growth_samples):
    """Median relative deviation of the reached set from the ball of radius
    phi*t decreases strictly in t, with decay exponent in [-0.75, -0.25]."""
    t0 = time.monotonic()
    phi = estimators.phi_from_samples(growth_samples, GROWTH_CONFIG.master_seed,
                                      bootstrap=1000)
    assert phi.ci_low <= phi.estimate <= phi.ci_high
    thresholds = tuple(v / phi.estimate for v in (50.0, 100.0, 150.0))
    band = estimators.shape_band(GROWTH_CONFIG, phi.estimate, thresholds,
                                 replicas=30, min_distinct=3)
    medians = [m for _, m in band.tier_medians]
    decreasing = all(a > b for a, b in zip(medians, medians[1:]))
    slope = band.fit.slope
    ok = decreasing and -0.75 <= slope <= -0.25
    dt = time.monotonic() - t0
    report("shape band", ok,
           f"phi={phi.estimate:.3f} medians={['%.3f' % m for m in medians]} "
           f"decay={slope:.3f} (in [-0.75,-0.25])", dt)
    assert ok, (medians, slope)


def test_geodesics_wander_sublinearly():
    """Hausdorff distance to the straight segment: fitted exponent at most
    0.85 and under 5% of top-tier geodesics above norm^0.85."""
    t0 = time.monotonic()
    config = ExperimentConfig(side=640.0, master_seed=31)
    scaling = estimators.geodesic_wander(config, (40.0, 80.0, 160.0),
                                         replicas=125, n_directions=4,
                                         min_distinct=3)
    slope = scaling.fit.slope
    frac = scaling.violation_fraction_top
    ok = slope <= 0.85 and frac < 0.05
    dt = time.monotonic() - t0
    report("geodesic wander", ok,
           f"exponent={slope:.3f} (<=0.85) top-tier violations={frac:.1%} "
           f"(<5%) n={len(scaling.records)}", dt)
    assert ok, (slope, frac)


def test_passage_time_deviations_decay_on_the_tail_window():
    """Log survival of |T - mean|/sqrt(norm) at norm 160, 2000 samples:
    negative fitted slope with R^2 >= 0.8 on the median-to-95th window."""
    t0 = time.monotonic()
    config = ExperimentConfig(side=640.0, master_seed=32)
    rows = estimators.passage_samples(config, (160.0,), replicas=500,
                                      n_directions=4)
    values = estimators.samples_by_tier(rows)[160.0]
    curve = estimators.moderate_tail(values, 160.0, window_quantiles=(0.5, 0.95))
    slope = curve.fit.slope
    r2 = curve.fit.r_squared
    ok = slope < 0 and r2 >= 0.8
    dt = time.monotonic() - t0
    report("moderate deviations", ok,
           f"slope={slope:.3f} (<0) r2={r2:.3f} (>=0.8) n={curve.n} "
           f"window=({curve.window[0]:.2f},{curve.window[1]:.2f})", dt)
    assert ok, (slope, r2)


def test_geodesic_tree_cone_violations_stabilize():
    """Widening the cone scan from side/8 to side/4 adds no violating
    through-vertex in at least 90% of 50 replicas."""
    t0 = time.monotonic()
    # bounded weights around 1: with Exp(1) the finite set of cone violators
    # still reaches past side/8 at this box size, so the asymptotic
    # stabilization is not yet visible; the statement is distribution-generic
    config = ExperimentConfig(side=1200.0, master_seed=33,
                              distribution=fpp.PassageDistribution.uniform_shifted(0.5, 1.5))
    stab = estimators.tree_straightness(config, replicas=50, exponent=-0.2)
    frac = stab.stabilized_fraction
    ok = frac >= 0.9
    dt = time.monotonic() - t0
    report("tree straightness", ok,
           f"stabilized {sum(stab.stabilized)}/50 ({frac:.0%}, >=90%)", dt)
    assert ok, frac
