#!/usr/bin/env python3
"""Rating-tournament demo on synthetic optimizer trajectories.

Simulates three optimizers with different convergence speeds on a handful of
functions, plays the pairwise fixed-budget games, and prints the ratings
table (and optionally writes trajectory CSVs for the `evotune tournament`
subcommand to chew on).
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from evotune.benchmarks.bbob import Trajectory, write_trajectory
from evotune.glicko2 import format_table, tournament


def synthetic_trajectory(rate: float, budget: int, rng: np.random.Generator) -> list:
    precision = 10.0 ** rng.uniform(1.0, 2.0)
    series = []
    for step in range(budget):
        precision *= rate ** (1.0 + 0.2 * rng.standard_normal())
        series.append(max(precision, 1e-10))
    return np.minimum.accumulate(series).tolist()


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--games", type=int, default=200)
    parser.add_argument("--budget", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--dump-dir", type=Path, default=None,
                        help="also write the trajectories as CSV directories")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    profiles = {"fast_converger": 0.990, "steady_improver": 0.995, "slow_starter": 0.998}
    functions = [1, 3, 8]
    runs = {
        algo: {
            fid: [synthetic_trajectory(rate, args.budget, rng) for _ in range(3)]
            for fid in functions
        }
        for algo, rate in profiles.items()
    }

    result = tournament(
        runs,
        games_per_function=args.games,
        rng=np.random.default_rng(args.seed + 1),
        max_budget=args.budget,
    )
    print(format_table(result.rows))

    if args.dump_dir:
        for algo, per_fn in runs.items():
            folder = args.dump_dir / algo
            folder.mkdir(parents=True, exist_ok=True)
            for fid, trajectories in per_fn.items():
                for run_index, series in enumerate(trajectories):
                    write_trajectory(
                        folder / f"f{fid}_i1_s{run_index + 1}.csv",
                        Trajectory(series, budget=args.budget),
                    )
        print(f"\ntrajectory CSVs written under {args.dump_dir}")
        print(f"try: evotune tournament {args.dump_dir}/*")
    return 0


if __name__ == "__main__":
    sys.exit(main())
