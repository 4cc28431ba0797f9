"""MAE, R-squared and the common part of commuters (Sorensen-Dice overlap)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError

CSV_FIELDS = (
    "dataset_type", "depth", "variance_threshold", "n_rules",
    "mae", "r2", "cpc", "mae_per_rule", "r2_per_rule", "cpc_per_rule",
)


def _pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.shape != p.shape:
        raise DataError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    if a.size == 0:
        raise DataError("empty evaluation vectors")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(p))):
        raise DataError("evaluation vectors contain non-finite values")
    return a, p


def mae(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    return float(np.mean(np.abs(a - p)))


def r_squared(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    if a.size < 2:
        raise DataError("R^2 needs at least two points")
    sst = float(np.sum((a - a.mean()) ** 2))
    if sst == 0.0:
        raise NumericError("R^2 undefined: actual values are constant")
    return 1.0 - float(np.sum((a - p) ** 2)) / sst


def cpc(actual, predicted) -> float:
    """2 * sum(min) / (sum(predicted) + sum(actual)); symmetric in its arguments."""
    a, p = _pair(actual, predicted)
    if np.any(a < 0) or np.any(p < 0):
        raise DataError("CPC needs non-negative flows; clamp predictions first")
    denom = float(np.sum(a) + np.sum(p))
    if denom == 0.0:
        raise NumericError("CPC undefined: both flow vectors are all zero")
    return 2.0 * float(np.sum(np.minimum(a, p))) / denom


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    r2: float
    cpc: float
    n_rules: int = 0
    mae_per_rule: float | None = None
    r2_per_rule: float | None = None
    cpc_per_rule: float | None = None

    def to_row(self, dataset_type: str = "", depth=None, variance_threshold=None) -> dict:
        def f(v):
            return "" if v is None else repr(float(v))

        return {
            "dataset_type": dataset_type,
            "depth": "" if depth is None else str(depth),
            "variance_threshold": "" if variance_threshold is None else repr(variance_threshold),
            "n_rules": str(self.n_rules),
            "mae": f(self.mae),
            "r2": f(self.r2),
            "cpc": f(self.cpc),
            "mae_per_rule": f(self.mae_per_rule),
            "r2_per_rule": f(self.r2_per_rule),
            "cpc_per_rule": f(self.cpc_per_rule),
        }

    @classmethod
    def from_row(cls, row: dict) -> MetricsReport:
        def f(k):
            v = row.get(k, "")
            return None if v in ("", None) else float(v)

        return cls(f("mae"), f("r2"), f("cpc"), int(row["n_rules"]),
                   f("mae_per_rule"), f("r2_per_rule"), f("cpc_per_rule"))


def per_rule(report: MetricsReport, n_rules: int) -> MetricsReport:
    if n_rules < 1:
        raise DataError("per-rule normalisation needs n_rules >= 1")
    return MetricsReport(report.mae, report.r2, report.cpc, n_rules,
                         report.mae / n_rules, report.r2 / n_rules, report.cpc / n_rules)


def evaluate(actual, predicted, n_rules: int = 0) -> MetricsReport:
    """Full report. Negative predictions are clamped to 0 for CPC only."""
    a, p = _pair(actual, predicted)
    rep = MetricsReport(mae(a, p), r_squared(a, p), cpc(a, np.maximum(p, 0.0)), n_rules)
    if not all(math.isfinite(v) for v in (rep.mae, rep.r2, rep.cpc)):
        raise NumericError("non-finite metric value")
    return per_rule(rep, n_rules) if n_rules > 0 else rep
