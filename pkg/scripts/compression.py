"""Evolve a small DPPN for the FC denoising autoencoder and compare with direct nets.

The direct baseline is trained for each requested hidden size so test BCE can be
plotted against parameter count.

    python scripts/compression.py --seed 0 --hidden 1 4 16 64
"""
import argparse

from dppn.cli import load_data, run_baseline_direct
from dppn.config import RunConfig
from dppn.experiments import FC_SCALED, run_once


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tournaments", type=int, default=FC_SCALED["tournaments"])
    ap.add_argument("--hidden", type=int, nargs="*", default=[1])
    args = ap.parse_args()

    cfg = RunConfig(**{**FC_SCALED, "seed": args.seed, "tournaments": args.tournaments})
    data = load_data(cfg)
    r = run_once(cfg, data)
    print(f"dppn    params {r.param_count:7d}  test BCE {r.loss:.4f}  ({r.seconds:.0f}s)")
    for h in args.hidden:
        d = run_baseline_direct(cfg, *data, hidden=h)
        print(f"direct  params {d['param_count']:7d}  test BCE {d['test_loss']:.4f}  hidden {h}")


if __name__ == "__main__":
    main()
