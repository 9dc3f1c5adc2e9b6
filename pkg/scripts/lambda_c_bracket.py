"""Survival probability of the one-dimensional contact process across lambda.

Runs the single-type process from a full ring and reports the fraction of
replicates still alive at the horizon, a bracket for the critical value.
"""

import argparse

import numpy as np

from multitype_cp.verify import survival_probability


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--lams", default="2.0:4.5:11", help="start:stop:num")
    p.add_argument("--L", type=int, default=400)
    p.add_argument("--T", type=float, default=200.0)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--seed", type=int, default=8)
    args = p.parse_args()
    a, b, n = args.lams.split(":")
    for lam in np.linspace(float(a), float(b), int(n)):
        s = survival_probability(lam, args.L, args.T, args.replicates, args.seed)
        se = np.sqrt(s * (1 - s) / args.replicates)
        print(f"lambda={lam:.3f}  survival {s:.3f} +- {se:.3f}")


if __name__ == "__main__":
    main()
