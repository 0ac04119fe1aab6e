"""Compare Lamarckian, Baldwinian and Darwinian inheritance on digit reconstruction.

Runs the scaled reconstruction setup for every mode over a set of seeds, prints
median final MSE per mode with one-sided Mann-Whitney p-values, and writes the
per-run results to a CSV.

    python scripts/inheritance_sweep.py --seeds 10 --out runs/inheritance.csv
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from dppn.experiments import inheritance_sweep, less_p, losses


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--tournaments", type=int, default=300)
    ap.add_argument("--crossover-prob", type=float, default=0.0)
    ap.add_argument("--out", type=Path, default=Path("runs/inheritance.csv"))
    args = ap.parse_args()

    res = inheritance_sweep(range(args.seeds), log=print, tournaments=args.tournaments,
                            crossover_prob=args.crossover_prob)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mode", "seed", "loss", "param_count", "seconds"])
        for mode, runs in res.items():
            for r in runs:
                w.writerow([mode, r.seed, repr(r.loss), r.param_count, f"{r.seconds:.1f}"])

    lam, bal, dar = (losses(res[m]) for m in ("lamarckian", "baldwinian", "darwinian"))
    for name, v in (("lamarckian", lam), ("baldwinian", bal), ("darwinian", dar)):
        print(f"{name:11s} median MSE {np.median(v):.5f}")
    print(f"p(lamarckian < baldwinian) = {less_p(lam, bal):.4g}")
    print(f"p(baldwinian < darwinian)  = {less_p(bal, dar):.4g}")


if __name__ == "__main__":
    main()
