#!/usr/bin/env python3
"""Spectral start with decaying steps against random start with a burn-in schedule."""

import argparse
import json
import sys

import numpy as np

from lart.harness import SimConfig, init_comparison, outlier_count
from lart.saem import FitConfig


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=808)
    ap.add_argument("--max-iters", type=int, default=200)
    ap.add_argument("--out", default="init_comparison.json")
    args = ap.parse_args(argv)

    rep = init_comparison(SimConfig(n_subjects=args.n, n_replications=args.reps, seed=args.seed),
                          FitConfig(max_iters=args.max_iters, seed=0))
    with open(args.out, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
    for arm in ("spectral", "burn_in"):
        a = np.array(rep[arm]["a"])
        print(f"{arm:9s} median RMSE(a) {np.median(a):.4f}  max {a.max():.4f}  outliers {outlier_count(a)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
