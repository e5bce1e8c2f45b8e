"""Command-line entry point.

Exit codes: 0 success, 2 configuration rejected, 3 partial replica failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .harness import EXPERIMENTS, ConfigError, load_config, run, validate


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rggfpp",
        description="First-passage percolation experiments on random "
                    "geometric graphs")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="INI or JSON config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed")
    parser.add_argument("--replicas", type=int, default=None,
                        help="override the replica count")
    parser.add_argument("--jobs", type=int, default=None,
                        help="override the parallelism degree")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--phi", type=float, default=None,
                        help="growth rate for the shape experiment "
                             "(from a prior phi or variance run)")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.experiment)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.replicas is not None:
        config = replace(config, replicas=args.replicas)
    if args.jobs is not None:
        config = replace(config, jobs=args.jobs)
    if args.out is not None:
        config = replace(config, out_dir=args.out)
    if args.phi is not None:
        config = replace(config, phi=args.phi)

    problems = validate(config, args.experiment)
    if problems:
        for msg in problems:
            print(f"config error: {msg}", file=sys.stderr)
        return 2

    try:
        outcome = run(config, args.experiment)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for rep, msg in outcome.errors:
        where = "aggregation" if rep < 0 else f"replica {rep}"
        print(f"{where} failed: {msg}", file=sys.stderr)
    print(f"{args.experiment}: wrote {len(outcome.files)} files to {outcome.out_dir}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
