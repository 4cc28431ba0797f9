"""CART regression trees with exhaustive midpoint split search."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .data import Dataset
from .errors import DataError

MAX_DEPTH_LIMIT = 32
DEFAULT_MIN_LEAF = 20


@dataclass(frozen=True)
class Leaf:
    mean: float
    n_samples: int
    sum_sq_dev: float


@dataclass(frozen=True)
class Internal:
    feature_index: int
    threshold: float
    left: Node
    right: Node


Node = Union[Leaf, Internal]


class PathStep(NamedTuple):
    feature_index: int
    feature: str
    op: str  # "<=" (went left) or ">" (went right)
    threshold: float


class LeafInfo(NamedTuple):
    mean: float
    n_samples: int
    path: tuple[PathStep, ...]


@dataclass(frozen=True)
class RegressionTree:
    root: Node
    max_depth: int
    min_leaf: int
    feature_names: tuple[str, ...]
    n_leaves: int

    def predict(self, row) -> float:
        row = np.asarray(row, dtype=float)
        if row.shape != (len(self.feature_names),):
            raise DataError(
                f"row has {row.size} values, tree expects {len(self.feature_names)}"
            )
        node = self.root
        while isinstance(node, Internal):
            node = node.left if row[node.feature_index] <= node.threshold else node.right
        return node.mean

    def predict_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise DataError(f"expected (n, {len(self.feature_names)}) matrix, got {X.shape}")
        out = np.empty(X.shape[0])
        stack = [(self.root, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if isinstance(node, Leaf):
                out[idx] = node.mean
                continue
            go_left = X[idx, node.feature_index] <= node.threshold
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out

    def leaves(self) -> list[LeafInfo]:
        """Depth-first, left-to-right leaf enumeration with root-to-leaf paths."""
        out: list[LeafInfo] = []

        def walk(node, path):
            if isinstance(node, Leaf):
                out.append(LeafInfo(node.mean, node.n_samples, tuple(path)))
                return
            name = self.feature_names[node.feature_index]
            walk(node.left, path + [PathStep(node.feature_index, name, "<=", node.threshold)])
            walk(node.right, path + [PathStep(node.feature_index, name, ">", node.threshold)])

        walk(self.root, [])
        return out

    def depth(self) -> int:
        def d(node):
            if isinstance(node, Leaf):
                return 0
            return 1 + max(d(node.left), d(node.right))

        return d(self.root)

    def to_dict(self) -> dict:
        def enc(node):
            if isinstance(node, Leaf):
                return {"leaf": True, "mean": node.mean, "n_samples": node.n_samples,
                        "sum_sq_dev": node.sum_sq_dev}
            return {
                "feature": self.feature_names[node.feature_index],
                "feature_index": node.feature_index,
                "threshold": node.threshold,
                "left": enc(node.left),
                "right": enc(node.right),
            }

        return {
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "feature_names": list(self.feature_names),
            "n_leaves": self.n_leaves,
            "root": enc(self.root),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RegressionTree:
        names = tuple(d["feature_names"])

        def dec(n):
            if n.get("leaf"):
                return Leaf(float(n["mean"]), int(n["n_samples"]), float(n["sum_sq_dev"]))
            j = int(n["feature_index"])
            if names[j] != n["feature"]:
                raise DataError(f"tree document inconsistent at feature {n['feature']!r}")
            return Internal(j, float(n["threshold"]), dec(n["left"]), dec(n["right"]))

        root = dec(d["root"])
        tree = cls(root, int(d["max_depth"]), int(d["min_leaf"]), names, _count_leaves(root))
        if tree.n_leaves != int(d["n_leaves"]):
            raise DataError("tree document leaf count does not match its nodes")
        return tree

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> RegressionTree:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: not a valid tree document ({e})") from None


def _count_leaves(node) -> int:
    if isinstance(node, Leaf):
        return 1
    return _count_leaves(node.left) + _count_leaves(node.right)


def _make_leaf(y: np.ndarray) -> Leaf:
    mean = float(np.mean(y))
    return Leaf(mean, int(y.size), float(np.sum((y - mean) ** 2)))


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Return (gain, feature, threshold) of the best split, or None.

    Gain is the SSE reduction SL^2/nL + SR^2/nR - S^2/n on mean-centred targets.
    Ties: first feature wins, then the smallest threshold.
    """
    n = y.size
    yc = y - y.mean()
    total = yc.sum()
    k = np.arange(min_leaf, n - min_leaf + 1)  # left sizes
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cs = np.cumsum(yc[order])
        lo, hi = xs[k - 1], xs[k]
        ok = lo < hi
        if not ok.any():
            continue
        kk = k[ok]
        sl = cs[kk - 1]
        sr = total - sl
        gain = sl * sl / kk + sr * sr / (n - kk) - total * total / n
        i = int(np.argmax(gain))
        if best is None or gain[i] > best[0]:
            a, b = lo[ok][i], hi[ok][i]
            t = (a + b) / 2.0
            if not a <= t < b:
                t = a
            best = (float(gain[i]), j, float(t))
    return best


def fit_tree(train: Dataset, max_depth: int, min_leaf: int = DEFAULT_MIN_LEAF) -> RegressionTree:
    """Grow a regression tree greedily by SSE reduction. Fully deterministic."""
    if train.n_rows == 0:
        raise DataError("cannot fit a tree on an empty training set")
    if not 1 <= max_depth <= MAX_DEPTH_LIMIT:
        raise DataError(f"max_depth must be in [1, {MAX_DEPTH_LIMIT}], got {max_depth}")
    if min_leaf < 1:
        raise DataError(f"min_leaf must be >= 1, got {min_leaf}")
    if train.n_rows < 2 * min_leaf:
        raise DataError(f"need at least {2 * min_leaf} rows for min_leaf={min_leaf}")
    if np.isnan(train.features).any():
        raise DataError("training features contain missing cells; impute first")
    X, y = train.features, train.target

    def grow(idx: np.ndarray, depth: int) -> Node:
        yn = y[idx]
        leaf = _make_leaf(yn)
        if depth >= max_depth or idx.size < 2 * min_leaf or np.ptp(yn) == 0:
            return leaf
        found = _best_split(X[idx], yn, min_leaf)
        # float-noise guard: a split must remove a non-negligible share of SSE
        if found is None or found[0] <= 1e-12 * leaf.sum_sq_dev:
            return leaf
        _, j, t = found
        go_left = X[idx, j] <= t
        return Internal(j, t, grow(idx[go_left], depth + 1), grow(idx[~go_left], depth + 1))

    root = grow(np.arange(train.n_rows), 0)
    return RegressionTree(root, max_depth, min_leaf, train.feature_names, _count_leaves(root))


def predict(tree: RegressionTree, row) -> float:
    return tree.predict(row)


def leaves(tree: RegressionTree) -> list[LeafInfo]:
    return tree.leaves()
