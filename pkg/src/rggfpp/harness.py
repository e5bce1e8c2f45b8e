"""Experiment harness: configuration, seeded replica execution, persistence.

A run is a pure function of (config, master_seed) up to timing metadata:
replica substreams are derived from (master_seed, replica id, purpose tag),
workers are order-independent, aggregation folds rows in a fixed (tier,
replica) order, and files are written atomically via a temp file and rename.
Wall times live only in the manifest so the data CSVs are byte-reproducible.

Config files are flat INI sections, one [common] block plus one optional
section per experiment whose keys override common ones; a JSON object with
the same two-level shape is also accepted.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from configparser import ConfigParser, Error as ConfigParserError
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from functools import partial

import numpy as np
import scipy

from . import augmented, estimators
from .estimators import build_replica, map_replicas
from .fpp import DistributionRejected, PassageDistribution
from .geometry import BoxDomain, build_rgg, sample_ppp
from .percolation import component_fractions, components, hole_diameter
from .rng import (DIRECTIONS, POINTS, SAMPLING, WEIGHTS, derive_rng,
                  lineage)

EXPERIMENTS = ("perc-scan", "phi", "variance", "tails", "shape", "wander",
               "tree", "rays", "holes", "augmented-compare")


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending fields."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs. Unset optional knobs are None, not zero."""

    d: int = 2
    intensity: float = 1.0
    radius: float = 2.0
    side: float = 100.0
    distribution: PassageDistribution = field(
        default_factory=lambda: PassageDistribution.exponential(1.0))
    master_seed: int = 0
    replicas: int = 1
    replica_offset: int = 0
    jobs: int = 1
    out_dir: str = "out"
    tiers: tuple[float, ...] = ()
    thresholds: tuple[float, ...] = ()
    directions: int = 4
    phi: float | None = None
    bootstrap: int = 1000
    tail_window_low: float = 0.1
    tail_window_high: float = 0.95
    wander_epsilon: float = 0.1
    cone_exponent: float = -0.2
    max_through: int = 256
    scan_radius: float | None = None
    band_fractions: tuple[float, ...] = (0.125, 0.25)
    band_width: float = 0.2
    perc_radii: tuple[float, ...] = ()
    hole_sides: tuple[float, ...] = ()
    hole_resolution: float = 0.25
    aug_spacings: tuple[float, ...] = (1.0,)
    kappa: float | None = None
    delta: float = 0.1
    budget_factor: float | None = None

    def kappa_value(self) -> float:
        # the extra-weight slope only needs to clear an existential bound;
        # 100 d dominates it by a wide margin at any admissible law
        return self.kappa if self.kappa is not None else 100.0 * self.d

    def replica_ids(self) -> range:
        return range(self.replica_offset, self.replica_offset + self.replicas)


@dataclass(frozen=True)
class ReplicaResult:
    replica: int
    lineages: tuple
    wall_seconds: float
    rows: tuple


@dataclass
class ExperimentOutcome:
    exit_code: int
    out_dir: str
    files: dict
    manifest: dict
    summary: dict | None
    errors: tuple


# ------------------------------------------------------------- validation


def _ascending(values) -> bool:
    return all(a < b for a, b in zip(values, values[1:]))


def validate(config: ExperimentConfig, experiment: str | None = None) -> list[str]:
    """Structured error list; empty means the config is runnable."""
    errors: list[str] = []

    def bad(msg: str) -> None:
        errors.append(msg)

    if int(config.d) < 2:
        bad(f"d: dimension must be at least 2, got {config.d}")
    if not (math.isfinite(config.intensity) and config.intensity > 0):
        bad("intensity must be positive")
    if not (math.isfinite(config.radius) and config.radius > 0):
        bad(f"radius: must be positive, got {config.radius}")
    if not (math.isfinite(config.side) and config.side > 0):
        bad(f"side: must be positive, got {config.side}")
    if config.replicas < 1:
        bad(f"replicas: need at least 1, got {config.replicas}")
    if config.replica_offset < 0:
        bad(f"replica_offset: must be nonnegative, got {config.replica_offset}")
    if config.jobs < 1:
        bad(f"jobs: need at least 1, got {config.jobs}")
    if config.directions < 1:
        bad(f"directions: need at least 1, got {config.directions}")
    if config.bootstrap < 1:
        bad(f"bootstrap: need at least 1 resample, got {config.bootstrap}")

    try:
        config.distribution.validate()
    except DistributionRejected as exc:
        bad(f"distribution: {exc}")

    if list(config.tiers) != sorted(config.tiers):
        bad("tiers: must be sorted ascending")
    for v in config.tiers:
        if v <= 0:
            bad(f"tiers: tier {v} must be positive")
        elif v > config.side / 3.0 + 1e-9:
            bad(f"tiers: tier {v} exceeds side/3 = {config.side / 3.0:g}; "
                "measurements there would feel the boundary")
    if list(config.thresholds) != sorted(config.thresholds):
        bad("thresholds: must be sorted ascending")
    for t in config.thresholds:
        if t <= 0:
            bad(f"thresholds: threshold {t} must be positive")
    if config.phi is not None and not (math.isfinite(config.phi) and config.phi > 0):
        bad(f"phi: must be positive when set, got {config.phi}")
    if config.phi is not None and config.thresholds:
        reach = config.phi * config.thresholds[-1]
        if reach > config.side / 4.0 + 1e-9:
            bad(f"thresholds: phi*t = {reach:g} exceeds side/4 = {config.side / 4.0:g}")

    if not (0 < config.tail_window_low < config.tail_window_high <= 1):
        bad(f"tail window: need 0 < low < high <= 1, got "
            f"({config.tail_window_low}, {config.tail_window_high})")
    if not (0 < config.wander_epsilon < 0.25):
        bad(f"wander_epsilon: must sit in (0, 1/4), got {config.wander_epsilon}")
    if not (-0.25 < config.cone_exponent < 0):
        bad(f"cone_exponent: must sit in (-1/4, 0), got {config.cone_exponent}")
    if config.max_through < 1:
        bad(f"max_through: need at least 1, got {config.max_through}")
    if config.scan_radius is not None and config.scan_radius <= 0:
        bad(f"scan_radius: must be positive when set, got {config.scan_radius}")
    if not (0 < config.band_width < 1):
        bad(f"band_width: must sit in (0, 1), got {config.band_width}")
    if list(config.band_fractions) != sorted(config.band_fractions):
        bad("band_fractions: must be sorted ascending")
    for f_ in config.band_fractions:
        if not (0 < f_ <= 0.5):
            bad(f"band_fractions: fraction {f_} must sit in (0, 1/2]")
    for r in config.perc_radii:
        if r <= 0:
            bad(f"perc_radii: radius {r} must be positive")
    if list(config.perc_radii) != sorted(config.perc_radii):
        bad("perc_radii: must be sorted ascending")
    for s in config.hole_sides:
        if s <= 1:
            bad(f"hole_sides: side {s} must exceed 1 for the log normalization")
    if not (config.hole_resolution > 0):
        bad(f"hole_resolution: must be positive, got {config.hole_resolution}")
    for t in config.aug_spacings:
        if not t >= 1:
            bad(f"aug_spacings: spacing {t} must be at least 1")
    if config.kappa is not None and not config.kappa > 1:
        bad(f"kappa: must exceed 1, got {config.kappa}")
    if not (0 < config.delta < 1):
        bad(f"delta: must sit in (0, 1), got {config.delta}")
    if config.budget_factor is not None and not config.budget_factor > 0:
        bad(f"budget_factor: must be positive when set, got {config.budget_factor}")

    needs_tiers = {"phi", "variance", "tails", "wander", "augmented-compare"}
    if experiment in needs_tiers and not config.tiers:
        bad(f"tiers: experiment {experiment!r} needs at least one distance tier")
    if experiment == "phi" and config.replicas < 10:
        bad("replicas: the growth-rate estimate needs at least 10")
    if experiment == "variance":
        if len(config.tiers) < 4:
            bad("tiers: variance scaling needs at least 4 tiers")
        if config.replicas * config.directions < 100:
            bad("replicas: variance scaling needs >= 100 samples per tier "
                f"(replicas*directions = {config.replicas * config.directions})")
    if experiment == "tails" and config.replicas * config.directions < 1000:
        bad("replicas: tail estimation needs >= 1000 samples at the top tier "
            f"(replicas*directions = {config.replicas * config.directions})")
    if experiment == "shape":
        if config.phi is None:
            bad("phi: the shape experiment needs the growth rate as input")
        if len(config.thresholds) < 3:
            bad("thresholds: the shape experiment needs at least 3 thresholds")
    if experiment == "wander" and len(config.tiers) < 3:
        bad("tiers: the wander experiment needs at least 3 tiers")
    if experiment == "perc-scan" and not config.perc_radii:
        bad("perc_radii: the percolation scan needs a radius grid")
    if experiment == "holes" and not config.hole_sides:
        bad("hole_sides: the hole experiment needs at least one box side")
    if experiment in ("tree", "rays"):
        try:
            estimators.check_tree_inputs(config, config.scan_radius,
                                         config.cone_exponent)
        except ValueError as exc:
            bad(f"scan_radius: {exc}")
    return errors


# ---------------------------------------------------------- config loading

_LIST_KEYS = {"tiers", "thresholds", "perc_radii", "hole_sides",
              "aug_spacings", "band_fractions"}
_INT_KEYS = {"d", "master_seed", "replicas", "replica_offset", "jobs",
             "directions", "bootstrap", "max_through"}
_FLOAT_KEYS = {"intensity", "radius", "side", "phi", "kappa", "delta",
               "budget_factor", "scan_radius", "tail_window_low",
               "tail_window_high", "wander_epsilon", "cone_exponent",
               "hole_resolution", "band_width"}
_STR_KEYS = {"out_dir"}
_DIST_KEYS = {"distribution", "rate", "a", "b", "mu", "sigma", "cap"}


def _parse_numbers(value) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(tok) for tok in str(value).replace(",", " ").split())


def _build_distribution(mapping: dict) -> PassageDistribution:
    kind = str(mapping.get("distribution", "exponential")).lower()
    try:
        if kind == "exponential":
            return PassageDistribution.exponential(float(mapping.get("rate", 1.0)))
        if kind == "uniform":
            if "a" not in mapping or "b" not in mapping:
                raise ConfigError("distribution: uniform needs keys a and b")
            return PassageDistribution.uniform_shifted(float(mapping["a"]),
                                                       float(mapping["b"]))
        if kind == "lognormal":
            if "mu" not in mapping or "sigma" not in mapping:
                raise ConfigError("distribution: lognormal needs keys mu and sigma")
            if "cap" in mapping:
                return PassageDistribution.lognormal(float(mapping["mu"]),
                                                     float(mapping["sigma"]),
                                                     float(mapping["cap"]))
            return PassageDistribution.lognormal(float(mapping["mu"]),
                                                 float(mapping["sigma"]))
    except ValueError as exc:
        raise ConfigError(f"distribution: {exc}") from exc
    raise ConfigError(f"distribution: unknown kind {kind!r}")


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    known = _LIST_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _DIST_KEYS
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs: dict = {}
    try:
        for key in _INT_KEYS & set(mapping):
            kwargs[key] = int(mapping[key])
        for key in _FLOAT_KEYS & set(mapping):
            kwargs[key] = float(mapping[key])
        for key in _LIST_KEYS & set(mapping):
            kwargs[key] = _parse_numbers(mapping[key])
        for key in _STR_KEYS & set(mapping):
            kwargs[key] = str(mapping[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config value: {exc}") from exc
    kwargs["distribution"] = _build_distribution(mapping)
    return ExperimentConfig(**kwargs)


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    """Read an INI or JSON config; section keys override [common] ones."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            sections = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
        if not all(isinstance(v, dict) for v in sections.values()):
            raise ConfigError("JSON config must map section names to objects")
    else:
        parser = ConfigParser()
        try:
            parser.read_string(text)
        except ConfigParserError as exc:
            raise ConfigError(f"invalid INI config: {exc}") from exc
        sections = {name: dict(parser[name]) for name in parser.sections()}
    merged = dict(sections.get("common", {}))
    if experiment is not None and experiment in sections:
        merged.update(sections[experiment])
    return config_from_mapping(merged)


# ------------------------------------------------------------- persistence


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str, columns, rows) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
    os.replace(tmp, path)


def write_json(path: str, payload: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _config_echo(config: ExperimentConfig) -> dict:
    echo = asdict(config)
    echo["distribution"] = config.distribution.describe()
    return echo


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(_config_echo(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ----------------------------------------------------------------- workers


def _guard(worker, purposes, args):
    config, replica = args[0], args[1]
    start = time.perf_counter()
    try:
        rows = worker(args)
        status, payload = "ok", rows
    except Exception as exc:  # replica faults must not sink the run
        status, payload = "error", f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - start
    lineages = tuple((name, lineage(config.master_seed, replica, tag))
                     for name, tag in purposes)
    return replica, status, payload, wall, lineages


def _run_guarded(worker, args_list, jobs, purposes):
    raw = map_replicas(partial(_guard, worker, purposes), args_list, jobs)
    results = [ReplicaResult(rep, lin, wall, tuple(payload))
               for rep, status, payload, wall, lin in raw if status == "ok"]
    errors = [(rep, payload)
              for rep, status, payload, wall, lin in raw if status == "error"]
    walls = [(rep, wall) for rep, status, payload, wall, lin in raw]
    return results, sorted(errors), walls


def _aggregate(errors: list, fn, *args, **kwargs):
    """Run an aggregation step; degraded data turns into an error row.

    Validation guarantees the sample-size preconditions for clean runs, so
    a failure here means replica errors thinned the data below them.
    """
    try:
        return fn(*args, **kwargs)
    except ValueError as exc:
        errors.append((-1, f"aggregate: {exc}"))
        return None


_MODEL_PURPOSES = (("points", POINTS), ("weights", WEIGHTS))
_DIRECTED_PURPOSES = _MODEL_PURPOSES + (("directions", DIRECTIONS),)
_SAMPLED_PURPOSES = _MODEL_PURPOSES + (("sampling", SAMPLING),)


def _perc_worker(args):
    config, replica = args
    domain = BoxDomain(config.d, config.side)
    cloud = sample_ppp(domain, config.intensity,
                       derive_rng(config.master_seed, replica, POINTS))
    rows = []
    for r in config.perc_radii:
        graph = build_rgg(cloud, float(r))
        giant, second = component_fractions(components(graph))
        rows.append((float(r), giant, second, replica))
    return rows


def _hole_worker(args):
    config, replica, side = args
    domain = BoxDomain(config.d, float(side))
    cloud = sample_ppp(domain, config.intensity,
                       derive_rng(config.master_seed, replica, POINTS))
    graph = build_rgg(cloud, config.radius)
    scan = hole_diameter(graph, components(graph), float(side) / 2.0,
                         config.hole_resolution)
    return [(float(side), replica, scan.diameter,
             scan.diameter / math.log(float(side)))]


def _rays_worker(args):
    config, replica, bands = args
    graph, field_, labeling = build_replica(config, replica)
    tree = estimators.grow_tree(graph, field_, labeling, np.zeros(config.d))
    rng = derive_rng(config.master_seed, replica, SAMPLING)
    rows = []
    for lo, hi in bands:
        fan = estimators.ray_directions(tree, (lo, hi), rng)
        dirs = tuple(tuple(float(c) for c in rec.direction) for rec in fan.records)
        rows.append((replica, float(lo), float(hi), len(fan.records),
                     fan.gap, dirs))
    return rows


def _augmented_worker(args):
    config, replica = args
    graph, field_, labeling = build_replica(config, replica)
    u = estimators.random_directions(
        derive_rng(config.master_seed, replica, DIRECTIONS), 1, config.d)[0]
    xs = np.array([float(v) * u for v in config.tiers])
    recs = augmented.discrepancy_rates(graph, field_, xs, config.aug_spacings,
                                       config.kappa_value(), config.delta,
                                       config.budget_factor, labeling)
    keys = ("x_norm", "t", "kappa", "y_ne_tt", "tt_ne_t", "qshift_gap",
            "hop_budget", "witness_hops", "box_crossings", "box_bound",
            "excursions_checked")
    return [tuple(r[k] for k in keys[:6]) + (replica,) + tuple(r[k] for k in keys[6:])
            for r in recs]


# ----------------------------------------------------------------- runners


def _runner_samples(config: ExperimentConfig, experiment: str):
    args = [(config, i, list(config.tiers), config.directions)
            for i in config.replica_ids()]
    results, errors, walls = _run_guarded(estimators._passage_samples_worker,
                                          args, config.jobs, _DIRECTED_PURPOSES)
    rows = [r for res in results for r in res.rows]
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    tables = [("samples.csv",
               ("replica", "direction", "norm", "passage_time", "q_displacement"),
               rows)]
    summary = None
    if rows:
        if experiment == "phi":
            est = _aggregate(errors, estimators.phi_from_samples, rows,
                             config.master_seed, config.bootstrap)
            if est is not None:
                summary = est.summary()
                tables.append(("tier_stats.csv",
                               ("norm", "mean_passage_time", "var_passage_time",
                                "n", "mean_ratio", "se_ratio"),
                               list(est.tier_stats)))
        elif experiment == "variance":
            scaling = _aggregate(errors, estimators.variance_scaling, rows)
            if scaling is not None:
                summary = scaling.summary()
                tables.append(("variance_table.csv",
                               ("norm", "var_passage_time", "normalized", "n"),
                               list(scaling.rows)))
        elif experiment == "tails":
            top = max(r[2] for r in rows)
            curve = _aggregate(errors, estimators.moderate_tail,
                               [r[3] for r in rows if r[2] == top], top,
                               (config.tail_window_low, config.tail_window_high))
            if curve is not None:
                summary = curve.summary()
                tables.append(("tail_curve.csv", ("ell", "survival"),
                               list(zip(curve.ell, curve.survival))))
    return tables, summary, errors, walls


def _runner_shape(config: ExperimentConfig, experiment: str):
    thresholds = estimators.check_shape_inputs(config, config.phi,
                                               config.thresholds)
    args = [(config, i, thresholds, float(config.phi))
            for i in config.replica_ids()]
    results, errors, walls = _run_guarded(estimators._shape_worker, args,
                                          config.jobs, _MODEL_PURPOSES)
    rows = [r for res in results for r in res.rows]
    rows.sort(key=lambda r: (r[1], r[0]))
    tables = [("deviations.csv",
               ("replica", "threshold", "inner_radius", "outer_radius",
                "delta_in", "delta_out", "max_deviation", "q_displacement"),
               rows)]
    summary = None
    if rows:
        band = _aggregate(errors, estimators.shape_from_rows, rows, config.phi,
                          min_distinct=min(4, len(thresholds)))
        if band is not None:
            summary = band.summary()
            summary["tier_medians"] = [list(m) for m in band.tier_medians]
    return tables, summary, errors, walls


def _runner_wander(config: ExperimentConfig, experiment: str):
    args = [(config, i, list(config.tiers), config.directions)
            for i in config.replica_ids()]
    results, errors, walls = _run_guarded(estimators._wander_worker, args,
                                          config.jobs, _DIRECTED_PURPOSES)
    rows = [r for res in results for r in res.rows]
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    coord_cols = tuple(f"y{k}" for k in range(config.d))
    tables = [("wander.csv",
               ("replica", "direction", "norm", "hausdorff") + coord_cols,
               rows)]
    summary = None
    if rows:
        scaling = _aggregate(errors, estimators.wander_from_rows, rows, config.d,
                             config.wander_epsilon,
                             min_distinct=min(4, len(config.tiers)))
        if scaling is not None:
            summary = scaling.summary()
    return tables, summary, errors, walls


def _runner_tree(config: ExperimentConfig, experiment: str):
    scan_radius = estimators.check_tree_inputs(config, config.scan_radius,
                                               config.cone_exponent)
    args = [(config, i, scan_radius, config.cone_exponent, config.max_through)
            for i in config.replica_ids()]
    results, errors, walls = _run_guarded(estimators._tree_worker, args,
                                          config.jobs, _SAMPLED_PURPOSES)
    triples = [res.rows for res in results]
    stab = estimators.stabilization_from_results(triples) if triples else None
    rows = []
    if stab is not None:
        rows = [r + (int(r[4] > r[3]),) for r in stab.rows]
    tables = [("cones.csv",
               ("replica", "through", "norm", "bound", "max_angle",
                "worst_downstream", "subtree_size", "violated"),
               rows)]
    summary = None
    if stab is not None:
        per_replica = [(res.replica, int(flag), radius)
                       for res, (flag, radius) in
                       zip(results, zip(stab.stabilized, stab.violation_radii))]
        tables.append(("stabilization.csv",
                       ("replica", "stabilized", "violation_radius"),
                       per_replica))
        summary = stab.summary()
        summary["scan_radius"] = scan_radius
        summary["cutoff"] = estimators.cone_cutoff(config.cone_exponent)
    return tables, summary, errors, walls


def _runner_rays(config: ExperimentConfig, experiment: str):
    scan_radius = estimators.check_tree_inputs(config, config.scan_radius,
                                               config.cone_exponent)
    bands = tuple(((1.0 - config.band_width) * f * config.side, f * config.side)
                  for f in config.band_fractions)
    args = [(config, i, bands) for i in config.replica_ids()]
    results, errors, walls = _run_guarded(_rays_worker, args, config.jobs,
                                          _SAMPLED_PURPOSES)
    gap_rows = []
    dir_rows = []
    for res in results:
        for replica, lo, hi, count, gap, dirs in res.rows:
            gap_rows.append((replica, lo, hi, count, gap))
            for vec in dirs:
                dir_rows.append((replica, lo, hi) + vec)
    gap_rows.sort(key=lambda r: (r[1], r[0]))
    dir_rows.sort(key=lambda r: (r[1], r[0], r[3:]))
    coord_cols = tuple(f"dir{k}" for k in range(config.d))
    tables = [("gaps.csv",
               ("replica", "band_low", "band_high", "leaf_count", "gap"),
               gap_rows),
              ("directions.csv",
               ("replica", "band_low", "band_high") + coord_cols,
               dir_rows)]
    summary = None
    if gap_rows:
        medians = {}
        for lo, hi in bands:
            gaps = [r[4] for r in gap_rows if r[1] == lo and r[2] == hi]
            medians[f"{lo:g}..{hi:g}"] = float(np.median(gaps)) if gaps else None
        summary = {
            "estimate": None, "ci_low": None, "ci_high": None,
            "fit_slope": None, "r_squared": None, "n": len(dir_rows),
            "median_gap_by_band": medians,
        }
    return tables, summary, errors, walls


def _runner_perc(config: ExperimentConfig, experiment: str):
    args = [(config, i) for i in config.replica_ids()]
    results, errors, walls = _run_guarded(_perc_worker, args, config.jobs,
                                          (("points", POINTS),))
    rows = [r for res in results for r in res.rows]
    rows.sort(key=lambda r: (r[0], r[3]))
    tables = [("percolation.csv",
               ("r", "giant_fraction", "second_component_fraction", "replica"),
               rows)]
    return tables, None, errors, walls


def _runner_holes(config: ExperimentConfig, experiment: str):
    args = [(config, i, side) for side in config.hole_sides
            for i in config.replica_ids()]
    results, errors, walls = _run_guarded(_hole_worker, args, config.jobs,
                                          (("points", POINTS),))
    rows = [r for res in results for r in res.rows]
    rows.sort(key=lambda r: (r[0], r[1]))
    tables = [("holes.csv", ("side", "replica", "diameter", "diameter_over_log_side"),
               rows)]
    summary = None
    if rows:
        med = {}
        for side in config.hole_sides:
            ratios = [r[3] for r in rows if r[0] == float(side)]
            med[f"{float(side):g}"] = float(np.median(ratios)) if ratios else None
        summary = {
            "estimate": None, "ci_low": None, "ci_high": None,
            "fit_slope": None, "r_squared": None, "n": len(rows),
            "median_ratio_by_side": med,
        }
    return tables, summary, errors, walls


def _runner_augmented(config: ExperimentConfig, experiment: str):
    args = [(config, i) for i in config.replica_ids()]
    results, errors, walls = _run_guarded(_augmented_worker, args, config.jobs,
                                          _DIRECTED_PURPOSES)
    rows = [r for res in results for r in res.rows]
    rows.sort(key=lambda r: (r[1], r[0], r[6]))
    tables = [("discrepancies.csv",
               ("x_norm", "t", "kappa", "y_ne_tt", "tt_ne_t", "qshift_gap",
                "replica", "hop_budget", "witness_hops", "box_crossings",
                "box_bound", "excursions_checked"),
               rows)]
    summary = None
    if rows:
        summary = {
            "estimate": None, "ci_low": None, "ci_high": None,
            "fit_slope": None, "r_squared": None, "n": len(rows),
            "y_ne_tt_rate": float(np.mean([r[3] for r in rows])),
            "tt_ne_t_rate": float(np.mean([r[4] for r in rows])),
            "max_qshift_gap": float(max(r[5] for r in rows)),
        }
    return tables, summary, errors, walls


_RUNNERS = {
    "perc-scan": _runner_perc,
    "phi": _runner_samples,
    "variance": _runner_samples,
    "tails": _runner_samples,
    "shape": _runner_shape,
    "wander": _runner_wander,
    "tree": _runner_tree,
    "rays": _runner_rays,
    "holes": _runner_holes,
    "augmented-compare": _runner_augmented,
}


def run(config: ExperimentConfig, experiment: str) -> ExperimentOutcome:
    """Execute one experiment: validate, run replicas, persist atomically.

    Partial replica failure still writes whatever aggregated cleanly, plus
    an errors.csv, and flips the exit code to 3.
    """
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; "
                          f"choose from {', '.join(EXPERIMENTS)}")
    problems = validate(config, experiment)
    if problems:
        raise ConfigError("; ".join(problems))

    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    runner = _RUNNERS[experiment]
    try:
        tables, summary, errors, walls = runner(config, experiment)
    except ValueError as exc:
        # input checks inside drivers surface as config errors
        raise ConfigError(str(exc)) from exc
    finished = datetime.now(timezone.utc).isoformat()

    out_dir = os.path.join(config.out_dir, experiment)
    os.makedirs(out_dir, exist_ok=True)
    files: dict = {}
    counts: dict = {}
    for name, columns, rows in tables:
        path = os.path.join(out_dir, name)
        write_csv(path, columns, rows)
        files[name] = path
        counts[name] = len(rows)
    if errors:
        path = os.path.join(out_dir, "errors.csv")
        write_csv(path, ("replica", "error"), errors)
        files["errors.csv"] = path
        counts["errors.csv"] = len(errors)
    if summary is not None:
        path = os.path.join(out_dir, "summary.json")
        write_json(path, summary)
        files["summary.json"] = path

    manifest = {
        "experiment": experiment,
        "config": _config_echo(config),
        "config_sha256": config_hash(config),
        "master_seed": config.master_seed,
        "started": started,
        "finished": finished,
        "wall_seconds": time.perf_counter() - t0,
        "replica_walls": [[rep, wall] for rep, wall in walls],
        "record_counts": counts,
        "rng_scheme": "seed sequence spawned on (replica id, purpose tag)",
        "purpose_tags": {"points": POINTS, "weights": WEIGHTS,
                         "directions": DIRECTIONS, "sampling": SAMPLING},
        "versions": {"rggfpp": _package_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    path = os.path.join(out_dir, "manifest.json")
    write_json(path, manifest)
    files["manifest.json"] = path

    return ExperimentOutcome(3 if errors else 0, out_dir, files, manifest,
                             summary, tuple(errors))


def _package_version() -> str:
    from . import __version__
    return __version__
