"""Explained variance of a k-component PCA on synthetic endmember mixtures.

    python scripts/pca_variance.py --endmembers 3 --noise 0.01 --k 1 2 3 5
"""

import argparse

import numpy as np

from rgbhsi.spectral import pca_fit
from rgbhsi.synth import mixture_cube


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--endmembers", type=int, default=3)
    ap.add_argument("--noise", type=float, default=0.01, help="noise sigma relative to the mean signal")
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--k", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    args = ap.parse_args()

    print(f"{'k':>3}  {'sum EVR (mean)':>15}  {'min':>8}")
    for k in args.k:
        evrs = []
        for seed in range(args.seeds):
            cube, _ = mixture_cube(seed, (args.size, args.size), args.endmembers, args.noise)
            evrs.append(pca_fit(cube, k=k).explained_variance_ratio.sum())
        print(f"{k:>3}  {np.mean(evrs):>15.4f}  {np.min(evrs):>8.4f}")


if __name__ == "__main__":
    main()
