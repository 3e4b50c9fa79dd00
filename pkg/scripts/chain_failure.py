#!/usr/bin/env python3
"""Chain-failure economics experiment.

Simulates long chains of dependent steps under a seeded stochastic step
model and compares the measured completion fraction against the analytic
prediction (1 - q^(r+1))^n for several retry budgets.
"""

from __future__ import annotations

import argparse
import time

from longhaul.backend import analytic_completion, chain_completion_fraction


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--per-step-success", type=float, default=0.99)
    parser.add_argument("--steps", type=int, default=100)
    parser.add_argument("--runs", type=int, default=10_000)
    parser.add_argument("--retries", type=int, nargs="*", default=[0, 1, 2, 3])
    parser.add_argument("--seed-base", type=int, default=0)
    args = parser.parse_args()

    p, n = args.per_step_success, args.steps
    print(f"p = {p}, steps = {n}, runs = {args.runs}")
    print(f"{'retries':>8} {'measured':>10} {'analytic':>10} {'delta':>9} {'time':>7}")
    for r in args.retries:
        start = time.monotonic()
        measured = chain_completion_fraction(p, n, args.runs, retry_budget=r,
                                             seed_base=args.seed_base)
        elapsed = time.monotonic() - start
        analytic = analytic_completion(p, n, retry_budget=r)
        print(f"{r:>8} {measured:>10.4f} {analytic:>10.4f} "
              f"{measured - analytic:>+9.4f} {elapsed:>6.2f}s")


if __name__ == "__main__":
    main()
