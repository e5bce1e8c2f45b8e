#!/usr/bin/env python3
"""Run a sequence of experiments from one config file.

The shape experiment needs the growth rate phi as an input; when the config
leaves it unset, this driver reads the estimate back from the summary.json
of a phi run in the same output tree. Every other experiment is independent
and just runs in order.

    python3 scripts/run_pipeline.py scripts/demo.ini
    python3 scripts/run_pipeline.py scripts/paper_scale.ini --only phi shape
"""
import argparse
import json
import sys
from pathlib import Path

from rggfpp import cli
from rggfpp.harness import EXPERIMENTS, load_config

DEFAULT_ORDER = ("perc-scan", "phi", "variance", "tails", "shape", "wander",
                 "holes", "tree", "rays", "augmented-compare")


def phi_from_run(out_dir: Path) -> float | None:
    # only the phi run's summary carries the growth rate; the variance
    # summary's estimate is the fitted variance exponent
    summary = out_dir / "phi" / "summary.json"
    if summary.exists():
        estimate = json.loads(summary.read_text()).get("estimate")
        if estimate:
            return float(estimate)
    return None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config")
    parser.add_argument("--only", nargs="+", choices=EXPERIMENTS,
                        metavar="EXPERIMENT", help="subset to run, in order")
    parser.add_argument("--out", help="override out_dir for every run")
    parser.add_argument("--jobs", type=int)
    args = parser.parse_args(argv)

    experiments = tuple(args.only) if args.only else DEFAULT_ORDER
    worst = 0
    for experiment in experiments:
        argv_exp = [experiment, "--config", args.config]
        if args.out:
            argv_exp += ["--out", args.out]
        if args.jobs:
            argv_exp += ["--jobs", str(args.jobs)]
        if experiment == "shape":
            config = load_config(args.config, "shape")
            if config.phi is None:
                out_base = Path(args.out or config.out_dir)
                phi = phi_from_run(out_base)
                if phi is None:
                    print("shape: no phi in the config and no phi/variance "
                          "summary to chain from", file=sys.stderr)
                    worst = max(worst, 2)
                    continue
                argv_exp += ["--phi", str(phi)]
        print(f"== {experiment}")
        code = cli.main(argv_exp)
        worst = max(worst, code)
        if code != 0:
            print(f"{experiment}: exit {code}", file=sys.stderr)
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
