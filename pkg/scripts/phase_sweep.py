"""Phase table in the intra (a11, a22) or inter (a12, a21) payoff plane.

The other two payoffs are held at zero.  Writes sweep.csv and
metadata.json (config hash, grids and per-run seeds) to ``--out``.
"""

import argparse
import json
import os

import numpy as np

from multitype_cp.experiments import ExperimentConfig, sweep

PLANES = {"intra": ("a11", "a22"), "inter": ("a12", "a21")}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--plane", choices=PLANES, default="intra")
    p.add_argument("--lo", type=float, default=-2.0)
    p.add_argument("--hi", type=float, default=2.0)
    p.add_argument("--num", type=int, default=9)
    p.add_argument("--side", type=int, default=50)
    p.add_argument("--T", type=float, default=200.0)
    p.add_argument("--lam", type=float, default=4.0)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default="out/phase")
    args = p.parse_args()
    ax1, ax2 = PLANES[args.plane]
    grid = np.linspace(args.lo, args.hi, args.num)
    cfg = ExperimentConfig(lam=args.lam, sides=(args.side, args.side), horizon=args.T,
                           replicates=args.replicates, seed=args.seed)
    res = sweep(cfg, ax1, grid, ax2, grid, workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    res.to_csv(os.path.join(args.out, "sweep.csv"))
    with open(os.path.join(args.out, "metadata.json"), "w") as fh:
        json.dump({"config": cfg.to_dict(), **res.metadata()}, fh, indent=2)
    # most frequent outcome per cell, rows indexed by the first axis
    letters = "12CE"
    print(f"{ax1} down, {ax2} across; 1/2 = type wins, C = coexistence, E = extinction")
    print("        " + " ".join(f"{v:6.2f}" for v in grid))
    for i, v in enumerate(grid):
        cells = [letters[int(np.argmax(res.counts[i, j]))] for j in range(len(grid))]
        print(f"{v:6.2f}  " + " ".join(f"{c:>6}" for c in cells))
    if res.failures:
        print(f"{len(res.failures)} runs failed; see metadata.json")


if __name__ == "__main__":
    main()
