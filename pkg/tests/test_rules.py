import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odrules.data import Dataset
from odrules.errors import DataError, MissingColumnError
from odrules.rules import (
    Condition,
    Rule,
    RuleSet,
    encode,
    extract_rules,
    filter_by_variance,
    format_condition,
    format_rule,
    indicator_variance,
    merge_path,
    parse_conditions,
    parse_rule,
    rule_matches,
)
from odrules.tree import PathStep, fit_tree

INF = math.inf


def random_ds(seed, n=400, m=3):
    rng = np.random.default_rng(seed)
    X = np.round(rng.uniform(0, 1, (n, m)), 3)
    y = 1000 * X[:, 0] + 300 * (X[:, 1] > 0.4) + rng.gamma(2, 20, n)
    return Dataset(tuple(f"f{j}" for j in range(m)), X, y)


def fitted(seed=0, depth=4, min_leaf=5):
    ds = random_ds(seed)
    return ds, fit_tree(ds, depth, min_leaf)


def table2_top_rule():
    conds = (
        Condition("distance_miles", upper=46.08),
        Condition("POIs_Destination", lower=323.0),
        Condition("POIs_Origin", lower=307.0),
    )
    return Rule(conds, 31867.81, 0, 0.0)


# --- merging and matching ---------------------------------------------------

def test_merge_nested_path():
    path = [PathStep(0, "x", "<=", 5.0), PathStep(0, "x", "<=", 3.0), PathStep(0, "x", ">", 1.0)]
    assert merge_path(path) == (Condition("x", 1.0, 3.0),)


def test_merge_keeps_first_seen_feature_order():
    path = [PathStep(1, "b", ">", 0.0), PathStep(0, "a", "<=", 2.0), PathStep(1, "b", "<=", 4.0)]
    assert merge_path(path) == (Condition("b", 0.0, 4.0), Condition("a", -INF, 2.0))


@pytest.mark.parametrize("x, expected", [(3.0, True), (1.0, False), (3.0001, False), (2.0, True)])
def test_interval_boundaries(x, expected):
    rule = Rule((Condition("x", 1.0, 3.0),), 0.0, 0, 0.0)
    assert rule_matches(rule, {"x": x}) is expected


def test_empty_rule_matches_anything():
    assert rule_matches(Rule((), 1.0, 0, 0.0), {"anything": -1e300})


def test_top_rule_hand_evaluation():
    row = {"distance_miles": 40.0, "POIs_Destination": 400.0, "POIs_Origin": 400.0}
    assert rule_matches(table2_top_rule(), row)
    assert not rule_matches(table2_top_rule(), {**row, "POIs_Origin": 307.0})


def test_rule_matches_missing_feature():
    with pytest.raises(MissingColumnError):
        rule_matches(table2_top_rule(), {"distance_miles": 1.0})


def test_condition_rejects_empty_interval():
    with pytest.raises(DataError):
        Condition("x", 3.0, 3.0)


def test_rule_rejects_repeated_feature():
    with pytest.raises(DataError):
        Rule((Condition("x", upper=1.0), Condition("x", lower=0.0)), 0.0, 0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_merged_conditions_equal_raw_path(seed, depth):
    ds, tree = fitted(seed, depth, 3)
    probe = np.random.default_rng(seed).uniform(-0.1, 1.1, (200, ds.n_cols))
    probe[:50] = ds.features[:50]  # include exact threshold neighbours
    rs = extract_rules(tree, ds)
    for leaf, rule in zip(tree.leaves(), rs.rules):
        raw = np.ones(len(probe), dtype=bool)
        for s in leaf.path:
            col = probe[:, s.feature_index]
            raw &= col <= s.threshold if s.op == "<=" else col > s.threshold
        merged = [rule_matches(rule, dict(zip(ds.feature_names, r))) for r in probe]
        assert raw.tolist() == merged


# --- extraction -------------------------------------------------------------

def test_single_leaf_tree_gives_one_universal_rule():
    ds = Dataset(("x",), np.arange(10.0).reshape(-1, 1), np.full(10, 7.0))
    rs = extract_rules(fit_tree(ds, 3, 1), ds)
    (r,) = rs.rules
    assert r.conditions == () and r.support == 10 and r.indicator_variance == 0.0


def test_extraction_counts_and_names():
    ds, tree = fitted(1, 3, 10)
    rs = extract_rules(tree, ds)
    assert len(rs) == tree.n_leaves <= 8
    assert rs.names() == [f"rule_3_{i}" for i in range(len(rs))]
    assert sum(r.support for r in rs.rules) == ds.n_rows
    assert rs.complete_partition


def test_extraction_rejects_foreign_data():
    _, tree = fitted()
    other = Dataset(("zz",), np.zeros((3, 1)), np.zeros(3))
    with pytest.raises(MissingColumnError):
        extract_rules(tree, other)


# --- encoding ---------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10))
def test_complete_encoding_is_one_hot(seed, depth):
    ds, tree = fitted(seed, depth, 2)
    probe = Dataset(ds.feature_names, np.random.default_rng(seed + 1).uniform(-0.5, 1.5, (300, 3)),
                    np.zeros(300))
    enc = encode(extract_rules(tree, ds), probe)
    assert np.all(enc.features.sum(axis=1) == 1)


def test_filtered_encoding_is_sub_one_hot():
    ds, tree = fitted(2, 6, 2)
    rs = filter_by_variance(extract_rules(tree, ds), 0.01)
    assert 0 < len(rs) < tree.n_leaves
    sums = encode(rs, ds).features.sum(axis=1)
    assert set(np.unique(sums)) <= {0.0, 1.0}
    assert not rs.complete_partition


def test_encoding_train_reproduces_support():
    ds, tree = fitted(3)
    rs = extract_rules(tree, ds)
    enc = encode(rs, ds)
    assert enc.features.sum(axis=0).tolist() == [r.support for r in rs.rules]
    assert enc.feature_names == tuple(rs.names())
    assert np.array_equal(enc.target, ds.target)


def test_encode_absent_column():
    _, tree = fitted()
    rs = extract_rules(tree, random_ds(0))
    with pytest.raises(MissingColumnError, match="f0"):
        encode(rs, Dataset(("a", "b", "c"), np.zeros((2, 3)), np.zeros(2)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10))
def test_rule_dot_product_equals_tree_prediction(seed, depth):
    ds, tree = fitted(seed, depth, 2)
    rs = extract_rules(tree, ds)
    X = np.random.default_rng(seed).uniform(0, 1, (100, 3))
    enc = encode(rs, Dataset(ds.feature_names, X, np.zeros(100)))
    means = np.array([r.leaf_mean for r in rs.rules])
    for row, ind in zip(X, enc.features):
        assert tree.predict(row) == means[ind == 1].sum()


# --- variance filter --------------------------------------------------------

def test_hand_variance_kept_at_all_thresholds():
    v = indicator_variance(5000, 100_000)
    assert v == pytest.approx(0.0475, abs=1e-15)
    rs = RuleSet((Rule((), 1.0, 5000, v),), 3, 100_000, True)
    for t in (0.01, 0.001, 0.0001):
        assert len(filter_by_variance(rs, t)) == 1


def test_full_support_rule_dropped_at_positive_threshold():
    rs = RuleSet((Rule((), 1.0, 10, indicator_variance(10, 10)),), 3, 10, True)
    assert len(filter_by_variance(rs, 1e-12)) == 0
    assert len(filter_by_variance(rs, 0.0)) == 1


def test_threshold_zero_is_identity_and_negative_rejected():
    ds, tree = fitted()
    rs = extract_rules(tree, ds)
    assert filter_by_variance(rs, 0.0) == rs
    with pytest.raises(DataError):
        filter_by_variance(rs, -0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 12))
def test_threshold_nesting(seed, depth):
    ds, tree = fitted(seed, depth, 1)
    rs = extract_rules(tree, ds)
    sets = [{r.index for r in filter_by_variance(rs, t).rules} for t in (0.01, 0.001, 0.0001, 0.0)]
    assert sets[0] <= sets[1] <= sets[2] <= sets[3] == {r.index for r in rs.rules}


@given(st.integers(0, 10_000), st.integers(1, 10_000))
def test_variance_bounds(support, n):
    support = min(support, n)
    assert 0.0 <= indicator_variance(support, n) <= 0.25


def test_filtering_keeps_original_indices():
    ds, tree = fitted(4, 6, 2)
    rs = extract_rules(tree, ds)
    kept = filter_by_variance(rs, 0.01)
    by_index = {r.index: r for r in rs.rules}
    assert all(by_index[r.index] == r for r in kept.rules)


# --- formatting and serialization -------------------------------------------

def test_format_interval():
    assert format_condition(Condition("distance_miles", 46.08, 58.77)) == "46.08 < distance_miles <= 58.77"


def test_format_empty_rule():
    assert format_rule(Rule((), 12.5, 1, 0.0)) == "TRUE => 12.50"


def test_format_top_rule():
    text = format_rule(table2_top_rule())
    assert text == ("distance_miles <= 46.08 AND POIs_Destination > 323.0 AND "
                    "POIs_Origin > 307.0 => 31867.81")
    conds, mean = parse_rule(text)
    assert conds == table2_top_rule().conditions and mean == 31867.81


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_format_parse_round_trip(seed, depth):
    ds, tree = fitted(seed, depth, 2)
    for r in extract_rules(tree, ds).rules:
        conds, mean = parse_rule(format_rule(r))
        assert conds == r.conditions
        assert mean == round(r.leaf_mean, 2)


def test_parse_rejects_garbage():
    with pytest.raises(DataError):
        parse_conditions("x ~ 3")


def test_json_round_trip(tmp_path):
    ds, tree = fitted(5, 5, 3)
    rs = filter_by_variance(extract_rules(tree, ds), 0.001)
    rs.save_json(tmp_path / "r.json")
    assert RuleSet.load_json(tmp_path / "r.json") == rs


def test_text_file_one_line_per_rule(tmp_path):
    ds, tree = fitted(6, 3, 10)
    rs = extract_rules(tree, ds)
    rs.save_text(tmp_path / "r.txt")
    lines = (tmp_path / "r.txt").read_text().splitlines()
    assert len(lines) == len(rs)
    assert lines[0].startswith("rule_3_0: ")
