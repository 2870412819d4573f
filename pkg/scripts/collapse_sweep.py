"""Collapse metric of learned polynomial embeddings on Duffing across sampling times and sample sizes.

Prints the per-(tau, N) mean and spread over seeds.

    python scripts/collapse_sweep.py [--seeds 5] [--degree 4] [--m 5] [--workers 4]
"""
import argparse

from immersionlab.dynamics import get_system
from immersionlab.learning import Dictionary, sweep, trend_ok

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--degree", type=int, default=4)
    ap.add_argument("--m", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--taus", type=float, nargs="+", default=[0.01, 0.1])
    ap.add_argument("--Ns", type=int, nargs="+", default=[100, 1000, 10000])
    args = ap.parse_args()

    rep = sweep(get_system("duffing"), Dictionary.monomials(2, args.degree), args.m, args.taus, args.Ns,
                list(range(args.seeds)), [(-2.0, 2.0), (-2.0, 2.0)], workers=args.workers)
    print(f"{'tau':>6} {'N':>6} {'ok':>3} {'mean':>8} {'std':>8}")
    for row in rep.summary():
        print(f"{row['tau']:6g} {row['N']:6d} {row['n_ok']:3d} {row['mean']:8.4f} {row['std']:8.4f}")
    for tau in args.taus:
        means = [m for _, m in rep.means(tau)]
        print(f"tau={tau:g}: non-increasing within tolerance: {trend_ok(means)}")
