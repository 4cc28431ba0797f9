"""Synthetic OD-flow table with a known piecewise-constant structure.

Six features uniform on [0, 1]; the flow is one of eight plateaus chosen by
axis-aligned cuts on the first three features, times 10% Gaussian noise.

    python -m odrules.synthetic --out flows.csv --rows 20000 --seed 0
"""

from __future__ import annotations

import argparse

import numpy as np

from .data import DEFAULT_TARGET, Dataset, write_csv

FEATURES = ("x0", "x1", "x2", "x3", "x4", "x5")
# leaf means of a depth-3 flow tree, largest first
PLATEAUS = (31867.81, 9709.81, 6492.03, 2728.70, 1648.22, 544.09, 515.81, 106.32)


def plateau_flow(X: np.ndarray) -> np.ndarray:
    x0, x1, x2 = X[:, 0], X[:, 1], X[:, 2]
    near = x0 <= 0.45
    mid = (x0 > 0.45) & (x0 <= 0.7)
    far = x0 > 0.7
    y = np.empty(len(X))
    y[near & (x1 > 0.6) & (x2 > 0.55)] = PLATEAUS[0]
    y[near & (x1 > 0.6) & (x2 <= 0.55)] = PLATEAUS[1]
    y[near & (x1 <= 0.6) & (x1 > 0.3)] = PLATEAUS[2]
    y[mid & (x2 > 0.4)] = PLATEAUS[3]
    y[near & (x1 <= 0.3)] = PLATEAUS[4]
    y[far & (x1 > 0.65)] = PLATEAUS[5]
    y[mid & (x2 <= 0.4)] = PLATEAUS[6]
    y[far & (x1 <= 0.65)] = PLATEAUS[7]
    return y


def make_synthetic(n_rows: int = 20_000, seed: int = 0, noise: float = 0.1) -> Dataset:
    rng = np.random.default_rng(seed)
    # rounded like measured data; keeps the bundled CSV small
    X = np.round(rng.uniform(0.0, 1.0, size=(n_rows, len(FEATURES))), 4)
    y = plateau_flow(X) * (1.0 + noise * rng.standard_normal(n_rows))
    return Dataset(FEATURES, X, np.round(np.maximum(y, 0.0), 2))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(prog="python -m odrules.synthetic", description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--rows", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--target", default=DEFAULT_TARGET)
    args = ap.parse_args(argv)
    write_csv(make_synthetic(args.rows, args.seed, args.noise), args.out, args.target)


if __name__ == "__main__":
    main()
