"""The dataset-variant experiment matrix: build it, run every cell, write the tables."""

from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import data as D
from .errors import DataError, OdRulesError, UsageError
from .metrics import CSV_FIELDS, MetricsReport, evaluate
from .nn import DEFAULT_HIDDEN, TrainConfig, init_mlp, predict_batch, train
from .rules import encode, extract_rules, filter_by_variance
from .tree import DEFAULT_MIN_LEAF, RegressionTree, fit_tree

log = logging.getLogger(__name__)

FINAL = "final"
RULES_ONLY = "rules_only"
RULES_PLUS_FINAL = "rules_plus_final"
DEFAULT_DEPTHS = tuple(range(3, 15))
TABLE_DEPTHS = tuple(range(3, 16))
DEFAULT_THRESHOLDS = (0.01, 0.001, 0.0001)
REPORT_METRICS = ("mae", "r2", "cpc", "mae_per_rule", "r2_per_rule", "cpc_per_rule")


def var_type(threshold: float) -> str:
    return f"var_{threshold!r}_plus_final"


def cell_seed(global_seed: int, depth: int | None, dataset_type: str) -> int:
    """Stable per-cell seed, independent of scheduling order."""
    ss = np.random.SeedSequence([int(global_seed), 0 if depth is None else int(depth) + 1,
                                 zlib.crc32(dataset_type.encode())])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_type: str
    depth: int | None
    variance_threshold: float | None
    seed: int
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        is_var = self.dataset_type.startswith("var_")
        if (self.dataset_type == FINAL) != (self.depth is None):
            raise UsageError(f"{self.dataset_type}: depth must be given exactly when not 'final'")
        if is_var != (self.variance_threshold is not None):
            raise UsageError(f"{self.dataset_type}: variance_threshold only for var_* types")
        if is_var and self.dataset_type != var_type(self.variance_threshold):
            raise UsageError(f"{self.dataset_type} does not match threshold {self.variance_threshold}")
        if not is_var and self.dataset_type not in (FINAL, RULES_ONLY, RULES_PLUS_FINAL):
            raise UsageError(f"unknown dataset_type {self.dataset_type!r}")

    @property
    def label(self) -> str:
        return self.dataset_type if self.depth is None else f"{self.dataset_type}@depth={self.depth}"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    n_rules_all: int | None
    n_rules_selected: int | None
    metrics: MetricsReport | None
    wall_time: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


class CellError(OdRulesError):
    def __init__(self, cfg: ExperimentConfig, msg: str, n_rules_all=None, n_rules_selected=None):
        super().__init__(f"[{cfg.label}] {msg}")
        self.n_rules_all = n_rules_all
        self.n_rules_selected = n_rules_selected


def build_matrix(
    depths: Iterable[int] = DEFAULT_DEPTHS,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    seed: int = 0,
    hidden_dims: Sequence[int] = DEFAULT_HIDDEN,
    train_cfg: TrainConfig = TrainConfig(),
) -> list[ExperimentConfig]:
    """Final dataset first, then per depth: rules only, rules + final, each variance level."""
    depths = list(depths)
    thresholds = list(thresholds)
    if not depths:
        raise UsageError("depth range is empty")
    if thresholds != sorted(thresholds, reverse=True) or len(set(thresholds)) != len(thresholds):
        raise UsageError(f"variance thresholds must be distinct and descending, got {thresholds}")
    hidden_dims = tuple(hidden_dims)

    def cfg(kind, depth, thr=None):
        s = cell_seed(seed, depth, kind)
        return ExperimentConfig(kind, depth, thr, s, hidden_dims, replace(train_cfg, seed=s))

    out = [cfg(FINAL, None)]
    for d in depths:
        out.append(cfg(RULES_ONLY, d))
        out.append(cfg(RULES_PLUS_FINAL, d))
        out.extend(cfg(var_type(t), d, t) for t in thresholds)
    return out


@dataclass(frozen=True)
class PreparedData:
    split: D.SplitPair
    scaling: D.ScalingStats
    vif: D.VifResult


def prepare_base(ds: D.Dataset, ratio: float = 0.8, seed: int = 0,
                 vif_threshold: float = 10.0) -> PreparedData:
    """Impute, split, standardize on train, then VIF-filter on train and mirror on test."""
    ds = D.impute_median(ds)
    sp = D.train_test_split(ds, ratio, seed)
    stats = D.fit_standardizer(sp.train)
    tr = D.apply_standardizer(sp.train, stats)
    te = D.apply_standardizer(sp.test, stats)
    vif = D.vif_filter(tr, vif_threshold)
    te = te.drop_columns(vif.removed)
    split = D.SplitPair(vif.dataset, te, seed, ratio, sp.train_index, sp.test_index)
    return PreparedData(split, stats, vif)


def fit_trees(train_ds: D.Dataset, depths: Iterable[int],
              min_leaf: int = DEFAULT_MIN_LEAF) -> dict[int, RegressionTree]:
    return {d: fit_tree(train_ds, d, min_leaf) for d in sorted(set(depths))}


def cell_datasets(cfg: ExperimentConfig, base: D.SplitPair, tree: RegressionTree | None):
    """Assemble (train, test, n_rules_all, n_rules_selected) for one cell."""
    if cfg.dataset_type == FINAL:
        return base.train, base.test, 0, 0
    rules = extract_rules(tree, base.train)
    n_all = len(rules)
    if cfg.variance_threshold is not None:
        rules = filter_by_variance(rules, cfg.variance_threshold)
    n_sel = len(rules)
    if cfg.dataset_type == RULES_ONLY and n_sel == 0:
        raise CellError(cfg, "empty feature set: no rules selected", n_all, n_sel)
    enc_tr, enc_te = encode(rules, base.train), encode(rules, base.test)
    if cfg.dataset_type == RULES_ONLY:
        return enc_tr, enc_te, n_all, n_sel
    return base.train.hstack(enc_tr), base.test.hstack(enc_te), n_all, n_sel


def run_cell(cfg: ExperimentConfig, base: D.SplitPair,
             trees: dict[int, RegressionTree] | None = None,
             min_leaf: int = DEFAULT_MIN_LEAF) -> ExperimentResult:
    t0 = time.perf_counter()
    n_all = n_sel = None
    try:
        with threadpool_limits(1):
            tree = None
            if cfg.depth is not None:
                tree = (trees or {}).get(cfg.depth) or fit_tree(base.train, cfg.depth, min_leaf)
            tr, te, n_all, n_sel = cell_datasets(cfg, base, tree)
            model = init_mlp(tr.n_cols, cfg.hidden_dims, cfg.seed)
            model, _ = train(model, tr, replace(cfg.train, seed=cfg.seed))
            pred = predict_batch(model, te)
            report = evaluate(te.target, pred, n_rules=n_sel)
    except CellError:
        raise
    except (OdRulesError, ValueError, ArithmeticError) as e:
        raise CellError(cfg, f"{type(e).__name__}: {e}", n_all, n_sel) from e
    return ExperimentResult(cfg, n_all, n_sel, report, time.perf_counter() - t0)


def _safe_run(cfg, base, trees, min_leaf) -> ExperimentResult:
    try:
        return run_cell(cfg, base, trees, min_leaf)
    except CellError as e:
        return ExperimentResult(cfg, e.n_rules_all, e.n_rules_selected, None, 0.0, str(e))


_WORKER: dict = {}


def _init_worker(base, trees, min_leaf):
    _WORKER.update(base=base, trees=trees, min_leaf=min_leaf)


def _worker_run(cfg):
    return _safe_run(cfg, _WORKER["base"], _WORKER["trees"], _WORKER["min_leaf"])


def run_all(matrix: Sequence[ExperimentConfig], base: D.SplitPair, parallelism: int = 1,
            min_leaf: int = DEFAULT_MIN_LEAF,
            trees: dict[int, RegressionTree] | None = None) -> list[ExperimentResult]:
    """Run every cell; failures become error records. Output order is matrix order."""
    if parallelism < 1:
        raise UsageError("parallelism must be >= 1")
    depths = {c.depth for c in matrix if c.depth is not None}
    trees = dict(trees or {})
    missing = depths - trees.keys()
    if missing:
        log.info("fitting trees for depths %s", sorted(missing))
        trees.update(fit_trees(base.train, missing, min_leaf))
    results: list[ExperimentResult | None] = [None] * len(matrix)

    def note(i, r):
        results[i] = r
        done = sum(x is not None for x in results)
        status = "ok" if r.ok else f"ERROR {r.error}"
        log.info("[%d/%d] %s %s (%.1fs)", done, len(matrix), r.config.label, status, r.wall_time)

    if parallelism == 1:
        for i, cfg in enumerate(matrix):
            note(i, _safe_run(cfg, base, trees, min_leaf))
    else:
        with ProcessPoolExecutor(parallelism, initializer=_init_worker,
                                 initargs=(base, trees, min_leaf)) as ex:
            futs = {ex.submit(_worker_run, cfg): i for i, cfg in enumerate(matrix)}
            for fut in as_completed(futs):
                note(futs[fut], fut.result())
    return results  # type: ignore[return-value]


@dataclass(frozen=True)
class RuleCountRow:
    depth: int
    all_rules: int
    selected: tuple[int | None, ...]  # aligned with the thresholds used


def count_rules(train_ds: D.Dataset, depths: Iterable[int],
                thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                min_leaf: int = DEFAULT_MIN_LEAF,
                trees: dict[int, RegressionTree] | None = None) -> list[RuleCountRow]:
    rows = []
    for d in sorted(set(depths)):
        tree = (trees or {}).get(d) or fit_tree(train_ds, d, min_leaf)
        rs = extract_rules(tree, train_ds)
        rows.append(RuleCountRow(d, len(rs), tuple(len(filter_by_variance(rs, t)) for t in thresholds)))
    return rows


def _fmt_thr(v):
    return "" if v is None else repr(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def results_rows(results: Sequence[ExperimentResult]) -> list[dict]:
    rows = []
    for r in results:
        c = r.config
        if r.metrics is not None:
            row = r.metrics.to_row(c.dataset_type, c.depth, c.variance_threshold)
        else:
            row = {k: "" for k in CSV_FIELDS}
            row.update(dataset_type=c.dataset_type, depth="" if c.depth is None else str(c.depth),
                       variance_threshold=_fmt_thr(c.variance_threshold),
                       n_rules="" if r.n_rules_selected is None else str(r.n_rules_selected))
        rows.append(row)
    return rows


def emit_reports(results: Sequence[ExperimentResult], out_dir,
                 rule_counts: Sequence[RuleCountRow] | None = None,
                 thresholds: Sequence[float] | None = None,
                 plots: bool = False) -> list[Path]:
    """Write results.csv, cells.csv, rule_counts.csv, series_<metric>.csv (and SVGs)."""
    if not results:
        raise UsageError("no results to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise UsageError(f"output directory {out} is not writable: {e}") from None

    written = []
    rows = results_rows(results)
    written.append(_write_csv(out / "results.csv", CSV_FIELDS,
                              ([row[k] for k in CSV_FIELDS] for row in rows)))
    written.append(_write_csv(
        out / "cells.csv",
        ("dataset_type", "depth", "variance_threshold", "seed", "n_rules_all",
         "n_rules_selected", "status", "error"),
        ((r.config.dataset_type, "" if r.config.depth is None else r.config.depth,
          _fmt_thr(r.config.variance_threshold), r.config.seed,
          "" if r.n_rules_all is None else r.n_rules_all,
          "" if r.n_rules_selected is None else r.n_rules_selected,
          "ok" if r.ok else "error", r.error or "") for r in results),
    ))

    if thresholds is None:
        thresholds = sorted({r.config.variance_threshold for r in results
                             if r.config.variance_threshold is not None}, reverse=True)
    if rule_counts is None:
        rule_counts = _counts_from_results(results, thresholds)
    written.append(_write_csv(
        out / "rule_counts.csv",
        ["depth", "all_rules"] + [f"var_{t!r}" for t in thresholds],
        ([rc.depth, rc.all_rules, *("" if n is None else n for n in rc.selected)]
         for rc in rule_counts),
    ))

    series = build_series(rows)
    for metric in REPORT_METRICS:
        written.append(_write_csv(out / f"series_{metric}.csv", ("depth", "dataset_type", "value"),
                                  series[metric]))
    if plots:
        from .plots import plot_series

        written.extend(plot_series(series, out))
    return written


def _counts_from_results(results, thresholds) -> list[RuleCountRow]:
    by_depth: dict[int, dict] = {}
    for r in results:
        c = r.config
        if c.depth is None or r.n_rules_all is None:
            continue
        entry = by_depth.setdefault(c.depth, {"all": r.n_rules_all})
        if c.variance_threshold is not None and r.n_rules_selected is not None:
            entry[c.variance_threshold] = r.n_rules_selected
    rows = []
    for d in sorted(by_depth):
        e = by_depth[d]
        sel = tuple(e.get(t) for t in thresholds)
        rows.append(RuleCountRow(d, e["all"], sel))
    return rows


def build_series(rows: Sequence[dict]) -> dict[str, list[tuple]]:
    """Long-format (depth, dataset_type, value) per metric.

    The final-dataset value has no depth; it is repeated at every depth so it
    plots as a flat baseline.
    """
    depths = sorted({int(r["depth"]) for r in rows if r["depth"] != ""})
    series: dict[str, list[tuple]] = {m: [] for m in REPORT_METRICS}
    for m in REPORT_METRICS:
        for r in rows:
            if r[m] == "":
                continue
            if r["depth"] == "":
                series[m].extend((d, r["dataset_type"], r[m]) for d in depths)
            else:
                series[m].append((int(r["depth"]), r["dataset_type"], r[m]))
        series[m].sort(key=lambda t: (t[0], _type_order(t[1])))
    return series


def _type_order(kind: str):
    fixed = {FINAL: 0, RULES_ONLY: 1, RULES_PLUS_FINAL: 2}
    if kind in fixed:
        return (fixed[kind], 0.0)
    return (3, -float(kind[len("var_"):-len("_plus_final")]))


def read_results(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --- run configuration -------------------------------------------------------

NN_KEYS = {"hidden_dims", "learning_rate", "epochs", "batch_size", "patience"}
TOP_KEYS = {
    "input_csv", "target_column", "split_ratio", "global_seed", "depths",
    "variance_thresholds", "nn", "parallelism", "out_dir", "emit_plots",
    "min_leaf", "vif_threshold", "table_depths",
}


def parse_depths(v) -> list[int]:
    """Accept a list of ints, a single int, or an inclusive range string ``"3-14"``."""
    if isinstance(v, int):
        return [v]
    if isinstance(v, str):
        lo, sep, hi = v.partition("-")
        if sep:
            return list(range(int(lo), int(hi) + 1))
        return [int(v)]
    if isinstance(v, (list, tuple)) and all(isinstance(x, int) for x in v):
        return list(v)
    raise ValueError(f"bad depth value {v!r}")


@dataclass(frozen=True)
class RunConfig:
    input_csv: Path
    target_column: str = D.DEFAULT_TARGET
    split_ratio: float = 0.8
    global_seed: tuple[int, ...] = (0,)
    depths: tuple[int, ...] = DEFAULT_DEPTHS
    table_depths: tuple[int, ...] = TABLE_DEPTHS
    variance_thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN
    train: TrainConfig = field(default_factory=TrainConfig)
    parallelism: int = 1
    out_dir: Path = Path("results")
    emit_plots: bool = False
    min_leaf: int = DEFAULT_MIN_LEAF
    vif_threshold: float = 10.0

    @classmethod
    def from_mapping(cls, d: dict, base_dir: Path = Path(".")) -> RunConfig:
        """Validate a config mapping. Every offending key is reported at once."""
        if not isinstance(d, dict):
            raise UsageError("config must be a mapping of keys to values")
        problems = [f"unknown key {k!r}" for k in d if k not in TOP_KEYS]
        nn = d.get("nn", {}) or {}
        if not isinstance(nn, dict):
            problems.append("'nn' must be a mapping")
            nn = {}
        problems += [f"unknown key 'nn.{k}'" for k in nn if k not in NN_KEYS]
        if "input_csv" not in d:
            problems.append("missing required key 'input_csv'")
        kw: dict = {}

        def take(key, conv, src=d, name=None, dest=None):
            if key not in src:
                return
            try:
                kw[dest or key] = conv(src[key])
            except (TypeError, ValueError) as e:
                problems.append(f"bad value for {name or key!r}: {e}")

        def seeds(v):
            v = [v] if isinstance(v, int) else list(v)
            if not v or not all(isinstance(x, int) for x in v):
                raise ValueError("expected an int or a list of ints")
            return tuple(v)

        def positive_int(v):
            if not isinstance(v, int) or v < 1:
                raise ValueError("expected a positive integer")
            return v

        def ratio(v):
            v = float(v)
            if not 0 < v < 1:
                raise ValueError("must lie in (0, 1)")
            return v

        take("input_csv", lambda v: (base_dir / str(v)))
        take("target_column", str)
        take("split_ratio", ratio)
        take("global_seed", seeds)
        take("depths", lambda v: tuple(parse_depths(v)))
        take("table_depths", lambda v: tuple(parse_depths(v)))
        take("variance_thresholds", lambda v: tuple(float(x) for x in v))
        take("parallelism", positive_int)
        take("out_dir", lambda v: base_dir / str(v))
        take("emit_plots", lambda v: v if isinstance(v, bool) else _bad("expected true/false"))
        take("min_leaf", positive_int)
        take("vif_threshold", float)
        take("hidden_dims", lambda v: tuple(positive_int(x) for x in v), nn, "nn.hidden_dims")
        tkw: dict = {}
        for key, dest, conv in (("learning_rate", "learning_rate", float),
                                ("epochs", "epochs", positive_int),
                                ("batch_size", "batch_size", positive_int),
                                ("patience", "early_stop_patience",
                                 lambda v: None if v is None else positive_int(v))):
            if key in nn:
                try:
                    tkw[dest] = conv(nn[key])
                except (TypeError, ValueError) as e:
                    problems.append(f"bad value for 'nn.{key}': {e}")
        if problems:
            raise UsageError("invalid config:\n  " + "\n  ".join(problems))
        try:
            kw["train"] = TrainConfig(**tkw)
        except DataError as e:
            raise UsageError(f"invalid config: nn: {e}") from None
        return cls(**kw)


def _bad(msg):
    raise ValueError(msg)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        d = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise UsageError(f"cannot parse config {path}: {e}") from None
    return RunConfig.from_mapping(d, path.parent)


def run_matrix(cfg: RunConfig, out_dir=None) -> dict[int, list[ExperimentResult]]:
    """Full pipeline for each global seed. Several seeds go to ``seed_<n>/`` subfolders."""
    out = Path(out_dir or cfg.out_dir)
    ds = D.load_csv(cfg.input_csv, cfg.target_column)
    all_results = {}
    for seed in cfg.global_seed:
        sub = out if len(cfg.global_seed) == 1 else out / f"seed_{seed}"
        log.info("seed %d: preparing data from %s", seed, cfg.input_csv)
        prep = prepare_base(ds, cfg.split_ratio, seed, cfg.vif_threshold)
        if prep.vif.removed:
            log.info("VIF filter removed %s", prep.vif.removed)
        trees = fit_trees(prep.split.train, set(cfg.depths) | set(cfg.table_depths), cfg.min_leaf)
        matrix = build_matrix(cfg.depths, cfg.variance_thresholds, seed, cfg.hidden_dims, cfg.train)
        results = run_all(matrix, prep.split, cfg.parallelism, cfg.min_leaf, trees)
        counts = count_rules(prep.split.train, cfg.table_depths, cfg.variance_thresholds,
                             cfg.min_leaf, trees)
        emit_reports(results, sub, counts, cfg.variance_thresholds, cfg.emit_plots)
        all_results[seed] = results
    if len(cfg.global_seed) > 1:
        write_summary(all_results, out / "summary.csv")
    return all_results


def write_summary(all_results: dict[int, list[ExperimentResult]], path) -> Path:
    """Mean of each metric per cell over the seeds that completed it."""
    acc: dict[tuple, list[MetricsReport]] = {}
    order: list[tuple] = []
    for results in all_results.values():
        for r in results:
            key = (r.config.dataset_type, r.config.depth, r.config.variance_threshold)
            if key not in acc:
                acc[key] = []
                order.append(key)
            if r.metrics is not None:
                acc[key].append(r.metrics)
    header = ("dataset_type", "depth", "variance_threshold", "n_seeds", "mae", "r2", "cpc")
    rows = []
    for key in order:
        ms = acc[key]
        vals = [repr(float(np.mean([getattr(m, f) for m in ms]))) if ms else "" for f in ("mae", "r2", "cpc")]
        rows.append((key[0], "" if key[1] is None else key[1], _fmt_thr(key[2]), len(ms), *vals))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return _write_csv(path, header, rows)


def mean_metric(all_results: dict[int, list[ExperimentResult]], dataset_type: str,
                depth: int, metric: str) -> float:
    vals = [getattr(r.metrics, metric) for rs in all_results.values() for r in rs
            if r.config.dataset_type == dataset_type and r.config.depth == depth and r.metrics]
    return float(np.mean(vals)) if vals else math.nan
