"""Escape statistics of random-cluster and Potts chains near the critical point.

Runs independent chains from the all-empty and all-full configurations on
random regular graphs of growing size and reports how often they leave their
starting phase within a fixed step budget. At beta_c the escape counts should
drop as n grows (exponentially slow mixing); away from beta_c one of the two
starts escapes quickly.

Usage:
    python -m scripts.evaluate_slow_mixing --n 20 40 80 --q 100 --delta 5
    python -m scripts.evaluate_slow_mixing --kernel rc-glauber --steps 5000 --beta 3.0
"""

from __future__ import annotations

import argparse
import logging
import os
import statistics
import sys
import time

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.rcpolymer.dynamics import KERNELS, Start, escape_experiment  # noqa: E402
from src.rcpolymer.graph import random_regular  # noqa: E402
from src.rcpolymer.phase import beta_c_potts_formula  # noqa: E402


def _mean_first_departure(histogram) -> float:
    total = sum(histogram.values())
    if total == 0:
        return float("nan")
    return sum(int(step) * count for step, count in histogram.items()) / total


def main() -> int:
    parser = argparse.ArgumentParser(description="Escape statistics of CM / Glauber chains")
    parser.add_argument("--n", type=int, nargs="+", default=[20, 40, 80], help="Graph sizes")
    parser.add_argument("--delta", type=int, default=5, help="Degree")
    parser.add_argument("--q", type=float, default=100.0, help="Cluster weight")
    parser.add_argument("--beta", type=float, default=None, help="Inverse temperature (default: beta_c formula)")
    parser.add_argument("--kernel", choices=KERNELS, default="cm", help="Chain to run")
    parser.add_argument("--steps", type=int, default=200, help="Steps per trial")
    parser.add_argument("--trials", type=int, default=20, help="Trials per start")
    parser.add_argument("--eta", type=float, default=0.01, help="Phase split")
    parser.add_argument("--n-jobs", type=int, default=1, help="Workers over trials")
    parser.add_argument("--rng-seed", type=int, default=0, help="Seed for graphs and chains")
    args = parser.parse_args()

    logging.getLogger().setLevel(logging.ERROR)
    beta = args.beta if args.beta is not None else beta_c_potts_formula(args.q, args.delta)

    print(f"\nEscape statistics ({args.kernel}, q={args.q:g}, delta={args.delta}, beta={beta:.4f}, "
          f"{args.trials} trials x {args.steps} steps)\n")
    print(f"| {'n':>4} | {'start':<5} | {'escapes':>7} | {'never left':>10} | {'mean first':>10} "
          f"| {'DIS':>5} | {'ORD':>5} | {'ERR':>5} | {'flips':>6} | {'sec':>6} |")
    print("|" + "-" * 6 + "|" + "-" * 7 + "|" + "-" * 9 + "|" + "-" * 12 + "|" + "-" * 12 + "|"
          + "-" * 7 + "|" + "-" * 7 + "|" + "-" * 7 + "|" + "-" * 8 + "|" + "-" * 8 + "|")
    escape_rates = []
    for n in args.n:
        g = random_regular(n, args.delta, seed=args.rng_seed + n)
        for start in (Start.EMPTY, Start.FULL):
            t0 = time.perf_counter()
            report = escape_experiment(
                g, args.q, beta, args.kernel, start, args.trials, args.steps,
                eta=args.eta, seed=args.rng_seed, n_jobs=args.n_jobs,
            )
            elapsed = time.perf_counter() - t0
            occ = report.phase_occupancy
            escape_rates.append(report.escape_count / args.trials)
            print(
                f"| {n:>4} | {start.value:<5} | {report.escape_count:>7} | {report.never_left:>10} "
                f"| {_mean_first_departure(report.first_escape_histogram):>10.1f} "
                f"| {occ['DIS']:>5.2f} | {occ['ORD']:>5.2f} | {occ['ERR']:>5.2f} "
                f"| {report.flips_per_trial:>6.2f} | {elapsed:>6.1f} |"
            )
    print(f"\nmean escapes per trial: {statistics.mean(escape_rates):.3f}\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
