"""odrules command line.

Exit codes: 0 ok, 2 usage/config, 3 data validation, 4 runtime/numeric failure.
Logs go to stderr; data goes to files (or stdout where a flag asks for it).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as D
from . import experiment as E
from .errors import DataError, MissingColumnError, OdRulesError, UsageError
from .metrics import CSV_FIELDS, evaluate
from .nn import MlpModel, TrainConfig, init_mlp, predict_batch, train
from .rules import RuleSet, encode, extract_rules, filter_by_variance
from .tree import DEFAULT_MIN_LEAF, RegressionTree, fit_tree

log = logging.getLogger("odrules")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_preprocess(a) -> int:
    ds = D.load_csv(a.input, a.target)
    prep = E.prepare_base(ds, a.ratio, a.seed, a.vif_threshold)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    D.write_csv(prep.split.train, out / "train.csv", a.target)
    D.write_csv(prep.split.test, out / "test.csv", a.target)
    (out / "scaling.json").write_text(json.dumps(prep.scaling.to_dict(), indent=1) + "\n")
    report = {"threshold": a.vif_threshold, "removed": prep.vif.removed, "trace": prep.vif.trace}
    (out / "vif_report.json").write_text(json.dumps(report, indent=1) + "\n")
    log.info("kept %d features, removed %s", prep.split.train.n_cols, prep.vif.removed or "none")
    return 0


def cmd_fit_tree(a) -> int:
    tree = fit_tree(D.load_csv(a.train, a.target), a.depth, a.min_leaf)
    tree.save(a.out)
    log.info("depth-%d tree with %d leaves -> %s", a.depth, tree.n_leaves, a.out)
    return 0


def cmd_extract_rules(a) -> int:
    tree = RegressionTree.load(a.tree)
    rs = extract_rules(tree, D.load_csv(a.train, a.target))
    n_all = len(rs)
    if a.variance_threshold is not None:
        rs = filter_by_variance(rs, a.variance_threshold)
    out = Path(a.out)
    rs.save_text(out)
    rs.save_json(Path(a.json) if a.json else out.with_suffix(".json"))
    log.info("%d rules (%d before filtering) -> %s", len(rs), n_all, out)
    return 0


def cmd_encode(a) -> int:
    rs = RuleSet.load_json(a.rules)
    ds = D.load_csv(a.input, a.target)
    enc = encode(rs, ds)
    D.write_csv(ds.hstack(enc) if a.with_base else enc, a.out, a.target)
    return 0


def cmd_train_nn(a) -> int:
    ds = D.load_csv(a.train, a.target)
    cfg = TrainConfig(epochs=a.epochs, batch_size=a.batch_size, learning_rate=a.learning_rate,
                      seed=a.seed, early_stop_patience=a.patience if a.patience > 0 else None,
                      validation_fraction=a.validation_fraction)
    model, hist = train(init_mlp(ds.n_cols, a.hidden_dims, a.seed), ds, cfg)
    model.save(a.out)
    log.info("trained %d epochs (best %d), final train loss %.6g",
             len(hist.train_loss), hist.best_epoch, hist.train_loss[-1])
    return 0


def _read_column(path, column) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    if column in header:
        j = header.index(column)
    elif len(header) == 1:
        j = 0
    else:
        raise MissingColumnError(column, str(path))
    try:
        return np.array([float(r[j]) for r in rows[1:]])
    except (ValueError, IndexError) as e:
        raise DataError(f"{path}: {e}") from None


def cmd_evaluate(a) -> int:
    if a.model:
        if not a.data:
            raise UsageError("--model needs --data")
        ds = D.load_csv(a.data, a.target)
        actual, pred = ds.target, predict_batch(MlpModel.load(a.model), ds)
    elif a.actual and a.predicted:
        actual = _read_column(a.actual, a.target)
        pred = _read_column(a.predicted, a.target)
    else:
        raise UsageError("evaluate needs either --model/--data or --actual/--predicted")
    rep = evaluate(actual, pred, n_rules=a.n_rules)
    if a.predictions_out:
        with open(a.predictions_out, "w", newline="", encoding="utf-8") as fh:
            fh.write("predicted\n" + "".join(f"{v!r}\n" for v in map(float, pred)))
    row = rep.to_row(a.dataset_type or "", a.depth, a.variance_threshold)
    if a.out:
        with open(a.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            w.writerow([row[k] for k in CSV_FIELDS])
    print(f"mae={rep.mae!r} r2={rep.r2!r} cpc={rep.cpc!r}")
    return 0


def cmd_run_matrix(a) -> int:
    cfg = E.load_run_config(a.config)
    if a.parallelism is not None:
        cfg = replace(cfg, parallelism=a.parallelism)
    out = Path(a.out_dir) if a.out_dir else cfg.out_dir
    all_results = E.run_matrix(cfg, out)
    n_err = sum(not r.ok for rs in all_results.values() for r in rs)
    if a.stdout:
        for seed in cfg.global_seed:
            sub = out if len(cfg.global_seed) == 1 else out / f"seed_{seed}"
            sys.stdout.write((sub / "results.csv").read_text(encoding="utf-8"))
    log.info("done: %d cells, %d errors -> %s", sum(map(len, all_results.values())), n_err, out)
    return 0


def cmd_report(a) -> int:
    res_dir = Path(a.results)
    rows = E.read_results(res_dir / "results.csv")
    if not rows:
        raise DataError(f"{res_dir / 'results.csv'} has no rows")
    series = E.build_series(rows)
    for metric in E.REPORT_METRICS:
        E._write_csv(res_dir / f"series_{metric}.csv", ("depth", "dataset_type", "value"),
                     series[metric])
    if a.plots:
        from .plots import plot_series

        plot_series(series, res_dir)
    counts = res_dir / "rule_counts.csv"
    if counts.is_file():
        print("rule counts")
        print(counts.read_text(encoding="utf-8"), end="")
    print("results")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("dataset_type", "depth", "n_rules", "mae", "r2", "cpc"))
    for r in rows:
        w.writerow([r["dataset_type"], r["depth"], r["n_rules"]]
                   + [f"{float(r[m]):.6g}" if r[m] else "" for m in ("mae", "r2", "cpc")])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="odrules", description="Tree-rule features for OD flow regression.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("preprocess", help="impute, split, standardize and VIF-filter a CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--vif-threshold", type=float, default=10.0)
    s.add_argument("--ratio", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("fit-tree", help="fit a regression tree")
    s.add_argument("--train", required=True)
    s.add_argument("--target", default=D.DEFAULT_TARGET)
    s.add_argument("--depth", type=int, required=True)
    s.add_argument("--min-leaf", type=int, default=DEFAULT_MIN_LEAF)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_tree)

    s = sub.add_parser("extract-rules", help="turn a tree into rules (text + JSON)")
    s.add_argument("--tree", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--target", default=D.DEFAULT_TARGET)
    s.add_argument("--variance-threshold", type=float)
    s.add_argument("--out", required=True, help="rule text file; JSON goes next to it")
    s.add_argument("--json", help="JSON rule document path")
    s.set_defaults(func=cmd_extract_rules)

    s = sub.add_parser("encode", help="encode rules as 0/1 columns")
    s.add_argument("--rules", required=True, help="JSON rule document")
    s.add_argument("--input", required=True)
    s.add_argument("--target", default=D.DEFAULT_TARGET)
    s.add_argument("--with-base", action="store_true", help="append rule columns to the input features")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train-nn", help="train the MLP regressor")
    s.add_argument("--train", required=True)
    s.add_argument("--target", default=D.DEFAULT_TARGET)
    s.add_argument("--out", required=True)
    s.add_argument("--hidden-dims", type=_int_list, default=[64, 32])
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--batch-size", type=int, default=256)
    s.add_argument("--learning-rate", type=float, default=1e-3)
    s.add_argument("--patience", type=int, default=20, help="0 disables early stopping")
    s.add_argument("--validation-fraction", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train_nn)

    s = sub.add_parser("evaluate", help="MAE, R2 and CPC of a model or of prediction files")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--actual")
    s.add_argument("--predicted")
    s.add_argument("--target", default=D.DEFAULT_TARGET)
    s.add_argument("--n-rules", type=int, default=0)
    s.add_argument("--dataset-type")
    s.add_argument("--depth", type=int)
    s.add_argument("--variance-threshold", type=float)
    s.add_argument("--out", help="write one metrics CSV row here")
    s.add_argument("--predictions-out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("run-matrix", help="run the full experiment matrix from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--parallelism", type=int)
    s.add_argument("--out-dir")
    s.add_argument("--stdout", action="store_true", help="also print results.csv")
    s.set_defaults(func=cmd_run_matrix)

    s = sub.add_parser("report", help="rebuild series files (and plots) from a results directory")
    s.add_argument("--results", required=True)
    s.add_argument("--plots", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        # single-threaded BLAS keeps stage outputs bit-identical to run-matrix cells
        with threadpool_limits(1):
            return args.func(args)
    except OdRulesError as e:
        print(f"odrules {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"odrules {args.command}: error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
