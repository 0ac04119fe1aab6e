"""Write the 5000-image MNIST subset shipped with mlxtend as IDX files.

Images are shuffled with a fixed seed and split 4000 train / 1000 test.
Output names follow the MNIST convention so ``--mnist-dir`` can point at
either this subset or a full MNIST download.

    python scripts/make_mnist_subset.py data/mnist5k
"""
import argparse
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from dppn.data_io import write_idx, write_idx_labels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    X, y = mnist_data()
    perm = np.random.default_rng(args.seed).permutation(len(X))
    X = X[perm].reshape(-1, 28, 28).astype(np.uint8)
    y = y[perm].astype(np.uint8)
    k = len(X) - args.n_test
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(X[:k], args.out / "train-images-idx3-ubyte.gz")
    write_idx_labels(y[:k], args.out / "train-labels-idx1-ubyte.gz")
    write_idx(X[k:], args.out / "t10k-images-idx3-ubyte.gz")
    write_idx_labels(y[k:], args.out / "t10k-labels-idx1-ubyte.gz")
    print(f"wrote {k} train / {len(X) - k} test images to {args.out}")


if __name__ == "__main__":
    main()
