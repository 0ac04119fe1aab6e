"""Effect of crossover on Lamarckian digit reconstruction.

    python scripts/crossover_sweep.py --seeds 10
"""
import argparse

import numpy as np

from dppn.experiments import crossover_sweep, less_p, losses


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--tournaments", type=int, default=300)
    args = ap.parse_args()

    res = crossover_sweep(range(args.seeds), log=print, tournaments=args.tournaments)
    with_x, without = losses(res[0.2]), losses(res[0.0])
    print(f"crossover 0.2 median MSE {np.median(with_x):.5f}")
    print(f"crossover 0.0 median MSE {np.median(without):.5f}")
    print(f"ratio {np.median(without) / np.median(with_x):.2f}  p = {less_p(with_x, without):.4g}")


if __name__ == "__main__":
    main()
