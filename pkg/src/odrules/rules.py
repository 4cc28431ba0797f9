"""If-then rules from tree paths, binary rule features, and variance filtering.

Conditions use the half-open interval ``(lower, upper]`` so that a merged
path condition agrees exactly with the tree's ``<=``-goes-left routing.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset
from .errors import DataError, MissingColumnError
from .tree import RegressionTree

INF = math.inf


@dataclass(frozen=True)
class Condition:
    feature: str
    lower: float = -INF
    upper: float = INF

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DataError(f"empty interval ({self.lower}, {self.upper}] on {self.feature!r}")

    def holds(self, value: float) -> bool:
        return self.lower < value <= self.upper

    def mask(self, col: np.ndarray) -> np.ndarray:
        m = np.ones(col.shape, dtype=bool)
        if self.lower > -INF:
            m &= col > self.lower
        if self.upper < INF:
            m &= col <= self.upper
        return m


@dataclass(frozen=True)
class Rule:
    conditions: tuple[Condition, ...]
    leaf_mean: float
    support: int
    indicator_variance: float
    index: int = 0

    def __post_init__(self):
        feats = [c.feature for c in self.conditions]
        if len(set(feats)) != len(feats):
            raise DataError(f"rule repeats a feature: {feats}")

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(c.feature for c in self.conditions)

    def name(self, depth: int) -> str:
        return f"rule_{depth}_{self.index}"


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    source_depth: int
    n_train_rows: int
    complete_partition: bool

    def __len__(self):
        return len(self.rules)

    def names(self) -> list[str]:
        return [r.name(self.source_depth) for r in self.rules]

    def to_dict(self) -> dict:
        def bound(v):
            return None if math.isinf(v) else v

        return {
            "source_depth": self.source_depth,
            "n_train_rows": self.n_train_rows,
            "complete_partition": self.complete_partition,
            "rules": [
                {
                    "index": r.index,
                    "leaf_mean": r.leaf_mean,
                    "support": r.support,
                    "indicator_variance": r.indicator_variance,
                    "conditions": [
                        {"feature": c.feature, "lower": bound(c.lower), "upper": bound(c.upper)}
                        for c in r.conditions
                    ],
                }
                for r in self.rules
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> RuleSet:
        rules = []
        for r in d["rules"]:
            conds = tuple(
                Condition(
                    c["feature"],
                    -INF if c["lower"] is None else float(c["lower"]),
                    INF if c["upper"] is None else float(c["upper"]),
                )
                for c in r["conditions"]
            )
            rules.append(Rule(conds, float(r["leaf_mean"]), int(r["support"]),
                              float(r["indicator_variance"]), int(r["index"])))
        return cls(tuple(rules), int(d["source_depth"]), int(d["n_train_rows"]),
                   bool(d["complete_partition"]))

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load_json(cls, path) -> RuleSet:
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: not a valid rule document ({e})") from None

    def save_text(self, path) -> None:
        lines = [
            f"{r.name(self.source_depth)}: {format_rule(r)} | support={r.support} "
            f"variance={r.indicator_variance:.6g}"
            for r in self.rules
        ]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def merge_path(path) -> tuple[Condition, ...]:
    """Collapse a root-to-leaf path into one interval per feature, in first-seen order."""
    bounds: dict[str, list[float]] = {}
    for step in path:
        lo, hi = bounds.setdefault(step.feature, [-INF, INF])
        if step.op == "<=":
            bounds[step.feature][1] = min(hi, step.threshold)
        elif step.op == ">":
            bounds[step.feature][0] = max(lo, step.threshold)
        else:
            raise DataError(f"unknown path operator {step.op!r}")
    return tuple(Condition(f, lo, hi) for f, (lo, hi) in bounds.items())


def rule_mask(rule: Rule, ds: Dataset) -> np.ndarray:
    m = np.ones(ds.n_rows, dtype=bool)
    for c in rule.conditions:
        m &= c.mask(ds.column(c.feature))
    return m


def indicator_variance(support: int, n_rows: int) -> float:
    p = support / n_rows
    return p * (1.0 - p)


def extract_rules(tree: RegressionTree, train: Dataset) -> RuleSet:
    """One rule per leaf, in depth-first order, with support measured on train."""
    for name in tree.feature_names:
        if name not in train.feature_names:
            raise MissingColumnError(name, "training data (tree/data column mismatch)")
    if train.n_rows == 0:
        raise DataError("cannot measure rule support on an empty dataset")
    n = train.n_rows
    rules = []
    for i, leaf in enumerate(tree.leaves()):
        conds = merge_path(leaf.path)
        draft = Rule(conds, leaf.mean, 0, 0.0, i)
        support = int(rule_mask(draft, train).sum())
        rules.append(replace(draft, support=support, indicator_variance=indicator_variance(support, n)))
    return RuleSet(tuple(rules), tree.max_depth, n, True)


def rule_matches(rule: Rule, row: Mapping[str, float]) -> bool:
    for c in rule.conditions:
        if c.feature not in row:
            raise MissingColumnError(c.feature, "row")
        if not c.holds(row[c.feature]):
            return False
    return True


def encode(ruleset: RuleSet, ds: Dataset) -> Dataset:
    """One 0/1 column per rule, named ``rule_<depth>_<index>``; target carried over."""
    for r in ruleset.rules:
        for f in r.features:
            if f not in ds.feature_names:
                raise MissingColumnError(f, "dataset to encode")
    cols = np.zeros((ds.n_rows, len(ruleset.rules)))
    for k, r in enumerate(ruleset.rules):
        cols[:, k] = rule_mask(r, ds)
    return Dataset(tuple(ruleset.names()), cols, ds.target)


def filter_by_variance(ruleset: RuleSet, threshold: float) -> RuleSet:
    """Keep rules whose indicator variance is at least ``threshold``."""
    if threshold < 0 or math.isnan(threshold):
        raise DataError(f"variance threshold must be >= 0, got {threshold}")
    kept = tuple(r for r in ruleset.rules if r.indicator_variance >= threshold)
    complete = ruleset.complete_partition and len(kept) == len(ruleset.rules)
    return RuleSet(kept, ruleset.source_depth, ruleset.n_train_rows, complete)


def _num(v: float) -> str:
    return repr(float(v))


def format_condition(c: Condition) -> str:
    if c.lower > -INF and c.upper < INF:
        return f"{_num(c.lower)} < {c.feature} <= {_num(c.upper)}"
    if c.upper < INF:
        return f"{c.feature} <= {_num(c.upper)}"
    if c.lower > -INF:
        return f"{c.feature} > {_num(c.lower)}"
    return f"{c.feature} unbounded"


def format_conditions(conditions: Sequence[Condition]) -> str:
    if not conditions:
        return "TRUE"
    return " AND ".join(format_condition(c) for c in conditions)


def format_rule(rule: Rule) -> str:
    """``46.08 < distance_miles <= 58.77 AND x > 1.0 => 2728.70``"""
    return f"{format_conditions(rule.conditions)} => {rule.leaf_mean:.2f}"


_NUM = r"[-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|inf)"
_BOTH = re.compile(rf"^({_NUM}) < (\S+) <= ({_NUM})$")
_UPPER = re.compile(rf"^(\S+) <= ({_NUM})$")
_LOWER = re.compile(rf"^(\S+) > ({_NUM})$")


def parse_conditions(text: str) -> tuple[Condition, ...]:
    text = text.strip()
    if text == "TRUE":
        return ()
    out = []
    for part in text.split(" AND "):
        part = part.strip()
        if m := _BOTH.match(part):
            out.append(Condition(m[2], float(m[1]), float(m[3])))
        elif m := _UPPER.match(part):
            out.append(Condition(m[1], -INF, float(m[2])))
        elif m := _LOWER.match(part):
            out.append(Condition(m[1], float(m[2]), INF))
        else:
            raise DataError(f"cannot parse condition {part!r}")
    return tuple(out)


def parse_rule(text: str) -> tuple[tuple[Condition, ...], float]:
    """Inverse of :func:`format_rule`. The mean comes back at 2-decimal precision."""
    conds, sep, mean = text.rpartition(" => ")
    if not sep:
        raise DataError(f"cannot parse rule {text!r}")
    return parse_conditions(conds), float(mean.replace(",", ""))
