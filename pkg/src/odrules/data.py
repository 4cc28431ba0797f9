"""Tabular OD-flow datasets: loading, imputation, scaling, VIF filtering, splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, MissingColumnError, MissingTargetError

MISSING_TOKENS = frozenset({"", "NA"})
DEFAULT_TARGET = "pop_flows"
# 1 - R^2 at or below this is reported as perfect collinearity.
COLLINEAR_TOL = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix plus flow target. Missing feature cells are NaN."""

    feature_names: tuple[str, ...]
    features: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        names = tuple(self.feature_names)
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.target, dtype=np.float64)
        if X.ndim != 2:
            X = X.reshape(len(y), len(names))
        if X.shape != (len(y), len(names)):
            raise DataError(
                f"features shape {X.shape} does not match "
                f"{len(y)} rows x {len(names)} names"
            )
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate feature names: {dupes}")
        if not np.all(np.isfinite(y)):
            raise DataError("target contains missing or non-finite values")
        if np.any(y < 0):
            raise DataError("target contains negative flow counts")
        if np.any(np.isinf(X)):
            raise DataError("features contain infinite values")
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "target", _readonly(y))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_cols(self) -> int:
        return self.features.shape[1]

    def column_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise MissingColumnError(name, "dataset") from None

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.column_index(name)]

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.features)

    def select_columns(self, names: Sequence[str]) -> Dataset:
        idx = [self.column_index(n) for n in names]
        return Dataset(tuple(names), self.features[:, idx], self.target)

    def drop_columns(self, names: Sequence[str]) -> Dataset:
        drop = set(names)
        for n in drop:
            self.column_index(n)
        return self.select_columns([n for n in self.feature_names if n not in drop])

    def take_rows(self, index: np.ndarray) -> Dataset:
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.feature_names, self.features[index], self.target[index])

    def hstack(self, other: Dataset) -> Dataset:
        """Append other's columns after ours. Targets must agree."""
        if other.n_rows != self.n_rows:
            raise DataError(f"row count mismatch: {self.n_rows} vs {other.n_rows}")
        if not np.array_equal(self.target, other.target):
            raise DataError("cannot concatenate datasets with different targets")
        return Dataset(
            self.feature_names + other.feature_names,
            np.hstack([self.features, other.features]),
            self.target,
        )


def load_csv(path, target_column: str = DEFAULT_TARGET) -> Dataset:
    """Read a header-first CSV. Empty cells and ``NA`` become missing features."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: no header row") from None
        if target_column not in header:
            raise MissingTargetError(target_column, str(path))
        t = header.index(target_column)
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise DataError(
                    f"{path}:{lineno}: malformed row, expected {len(header)} cells, got {len(raw)}"
                )
            vals = []
            for col, cell in zip(header, raw):
                cell = cell.strip()
                if cell in MISSING_TOKENS:
                    vals.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: column {col!r}: cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: column {col!r}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: empty dataset")
    M = np.array(rows, dtype=np.float64)
    y = M[:, t]
    if np.any(np.isnan(y)):
        bad = int(np.flatnonzero(np.isnan(y))[0]) + 2
        raise DataError(f"{path}:{bad}: target column {target_column!r} is missing")
    names = tuple(h for i, h in enumerate(header) if i != t)
    X = np.delete(M, t, axis=1)
    return Dataset(names, X, y)


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "NA"
    return repr(float(v))


def write_csv(ds: Dataset, path, target_column: str = DEFAULT_TARGET) -> None:
    """Write ds with the target as the last column. Floats round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(ds.feature_names) + [target_column])
        for row, y in zip(ds.features, ds.target):
            w.writerow([_fmt(v) for v in row] + [_fmt(y)])


def impute_median(ds: Dataset) -> Dataset:
    """Replace each missing cell with its column's median (mean of middles for even counts)."""
    X = np.array(ds.features)
    miss = np.isnan(X)
    if not miss.any():
        return ds
    for j in np.flatnonzero(miss.any(axis=0)):
        present = X[~miss[:, j], j]
        if present.size == 0:
            raise DataError(f"column {ds.feature_names[j]!r} is entirely missing")
        X[miss[:, j], j] = np.median(present)
    return Dataset(ds.feature_names, X, ds.target)


def is_binary_column(col: np.ndarray) -> bool:
    return bool(np.all((col == 0.0) | (col == 1.0)))


@dataclass(frozen=True, eq=False)
class ScalingStats:
    columns: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    constant: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "mean": [float(v) for v in self.mean],
            "sd": [float(v) for v in self.sd],
            "constant": [bool(v) for v in self.constant],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ScalingStats:
        return cls(
            tuple(d["columns"]),
            np.asarray(d["mean"], dtype=float),
            np.asarray(d["sd"], dtype=float),
            np.asarray(d["constant"], dtype=bool),
        )


def fit_standardizer(ds: Dataset, columns: Sequence[str] | None = None) -> ScalingStats:
    """Population z-score stats. By default every non-binary column is selected.

    Zero-variance columns are flagged constant and pass through unscaled.
    """
    if columns is None:
        columns = [n for n, c in zip(ds.feature_names, ds.features.T) if not is_binary_column(c)]
    columns = tuple(columns)
    idx = [ds.column_index(c) for c in columns]
    X = ds.features[:, idx]
    if np.isnan(X).any():
        raise DataError("cannot fit scaling on data with missing cells; impute first")
    mean = X.mean(axis=0) if len(ds.target) else np.zeros(len(idx))
    sd = X.std(axis=0) if len(ds.target) else np.ones(len(idx))
    constant = ~(sd > 0)
    sd = np.where(constant, 1.0, sd)
    return ScalingStats(columns, mean, sd, constant)


def _check_stats(ds: Dataset, stats: ScalingStats) -> list[int]:
    if not (np.all(np.isfinite(stats.mean)) and np.all(np.isfinite(stats.sd))):
        raise DataError("scaling stats contain non-finite values")
    return [ds.column_index(c) for c in stats.columns]


def apply_standardizer(ds: Dataset, stats: ScalingStats) -> Dataset:
    idx = _check_stats(ds, stats)
    X = np.array(ds.features)
    live = ~stats.constant
    cols = np.asarray(idx, dtype=np.intp)[live]
    X[:, cols] = (X[:, cols] - stats.mean[live]) / stats.sd[live]
    return Dataset(ds.feature_names, X, ds.target)


def invert_standardizer(ds: Dataset, stats: ScalingStats) -> Dataset:
    idx = _check_stats(ds, stats)
    X = np.array(ds.features)
    live = ~stats.constant
    cols = np.asarray(idx, dtype=np.intp)[live]
    X[:, cols] = X[:, cols] * stats.sd[live] + stats.mean[live]
    return Dataset(ds.feature_names, X, ds.target)


def compute_vif(ds: Dataset) -> np.ndarray:
    """Variance inflation factor per feature, from an intercept OLS on the other columns.

    Perfectly collinear columns get ``inf``.
    """
    X = ds.features
    n, m = X.shape
    if np.isnan(X).any():
        raise DataError("VIF requires imputed data")
    if n <= m:
        raise DataError(f"VIF needs more rows than columns ({n} rows, {m} columns)")
    for j in range(m):
        if np.ptp(X[:, j]) == 0:
            raise DataError(f"column {ds.feature_names[j]!r} is constant; VIF undefined")
    vif = np.empty(m)
    ones = np.ones((n, 1))
    for j in range(m):
        y = X[:, j]
        A = np.hstack([ones, np.delete(X, j, axis=1)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        sst = float(np.sum((y - y.mean()) ** 2))
        unexplained = float(resid @ resid) / sst
        vif[j] = math.inf if unexplained <= COLLINEAR_TOL else 1.0 / unexplained
    return vif


class VifResult(NamedTuple):
    dataset: Dataset
    removed: list[str]
    trace: list[dict]


def vif_filter(ds: Dataset, threshold: float = 10.0) -> VifResult:
    """Greedily drop the worst-VIF column until every VIF is <= threshold.

    Among tied maxima the lowest-indexed column survives, so the highest
    index is dropped. ``trace`` records the VIF vector seen at each step.
    """
    removed: list[str] = []
    trace: list[dict] = []
    cur = ds
    while cur.n_cols > 0:
        vif = compute_vif(cur)
        step = {"vif": dict(zip(cur.feature_names, (float(v) for v in vif)))}
        worst = float(np.max(vif))
        if worst <= threshold:
            step["removed"] = None
            trace.append(step)
            break
        j = int(np.flatnonzero(vif == worst)[-1])
        name = cur.feature_names[j]
        step["removed"] = name
        trace.append(step)
        removed.append(name)
        cur = cur.drop_columns([name])
    return VifResult(cur, removed, trace)


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: Dataset
    test: Dataset
    seed: int
    ratio: float
    train_index: np.ndarray
    test_index: np.ndarray


def train_test_split(ds: Dataset, ratio: float = 0.8, seed: int = 0) -> SplitPair:
    """Seeded uniform row partition; train gets round(ratio * n) rows."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    n = ds.n_rows
    if n < 2:
        raise DataError("need at least 2 rows to split")
    n_train = int(math.floor(ratio * n + 0.5))
    if n_train == 0:
        raise DataError("empty train split")
    if n_train == n:
        raise DataError("empty test split")
    perm = np.random.default_rng(seed).permutation(n)
    tr = np.sort(perm[:n_train])
    te = np.sort(perm[n_train:])
    return SplitPair(ds.take_rows(tr), ds.take_rows(te), seed, ratio, tr, te)
