import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from odrules.errors import DataError, NumericError
from odrules.metrics import CSV_FIELDS, MetricsReport, cpc, evaluate, mae, per_rule, r_squared

from oracles import cpc_direct

flows = arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1e6))


def pair(n_min=1):
    return st.integers(n_min, 30).flatmap(
        lambda n: st.tuples(*(arrays(np.float64, n, elements=st.floats(0, 1e6)) for _ in range(2))))


# --- unit values ------------------------------------------------------------

def test_mae_units():
    assert mae([0, 2], [1, 1]) == 1.0
    assert mae([3.5, -1.0], [3.5, -1.0]) == 0.0


def test_mae_homogeneity():
    a, p = np.array([1.0, 5.0, -2.0]), np.array([0.0, 4.0, 3.0])
    assert mae(-3 * a, -3 * p) == pytest.approx(3 * mae(a, p), rel=1e-15)


def test_r2_units():
    assert r_squared([1, 2, 3], [1, 2, 4]) == 0.5
    assert r_squared([1, 2, 3], [1, 2, 3]) == 1.0
    assert r_squared([1, 2, 3], [2, 2, 2]) == 0.0


def test_r2_constant_actual():
    with pytest.raises(NumericError):
        r_squared([4, 4, 4], [1, 2, 3])


def test_cpc_units():
    assert cpc([1, 1], [2, 0]) == 0.5
    assert cpc([0, 2], [2, 0]) == 0.0
    assert cpc([3, 7, 0], [3, 7, 0]) == 1.0


def test_cpc_errors():
    with pytest.raises(DataError):
        cpc([1, -1], [1, 1])
    with pytest.raises(NumericError):
        cpc([0, 0], [0, 0])


@pytest.mark.parametrize("fn", [mae, r_squared, cpc])
def test_shape_checks(fn):
    with pytest.raises(DataError):
        fn([1, 2], [1, 2, 3])
    with pytest.raises(DataError):
        fn([], [])
    with pytest.raises(DataError):
        fn([1.0, np.nan], [1.0, 2.0])


# --- per-rule and reports ---------------------------------------------------

def test_per_rule_division():
    rep = per_rule(MetricsReport(10.0, 0.5, 0.8), 5)
    assert rep.mae_per_rule == 2.0 and rep.r2_per_rule == 0.1
    assert per_rule(MetricsReport(10.0, 0.5, 0.8), 8).cpc_per_rule == 0.1
    one = per_rule(MetricsReport(10.0, 0.5, 0.8), 1)
    assert (one.mae_per_rule, one.r2_per_rule, one.cpc_per_rule) == (10.0, 0.5, 0.8)
    with pytest.raises(DataError):
        per_rule(MetricsReport(1.0, 1.0, 1.0), 0)


def test_evaluate_clamps_for_cpc_only():
    actual, pred = np.array([1.0, 2.0, 3.0]), np.array([-1.0, 2.0, 3.0])
    rep = evaluate(actual, pred)
    assert rep.mae == mae(actual, pred)
    assert rep.r2 == r_squared(actual, pred)
    assert rep.cpc == cpc(actual, [0.0, 2.0, 3.0])
    assert rep.mae_per_rule is None


def test_evaluate_with_rules_and_row_round_trip():
    rep = evaluate([1.0, 2.0, 4.0], [1.5, 2.0, 3.0], n_rules=4)
    row = rep.to_row("rules_only", 5, 0.001)
    assert tuple(row) == CSV_FIELDS
    assert row["variance_threshold"] == "0.001"
    assert MetricsReport.from_row(row) == rep


# --- properties -------------------------------------------------------------

@given(pair())
def test_cpc_symmetric_and_bounded(ab):
    a, b = ab
    if a.sum() + b.sum() == 0:
        return
    v = cpc(a, b)
    assert v == cpc(b, a)
    assert 0.0 <= v <= 1.0


@given(pair())
def test_cpc_matches_direct_sum(ab):
    a, b = ab
    if a.sum() + b.sum() == 0:
        return
    assert cpc(a, b) == pytest.approx(cpc_direct(a.tolist(), b.tolist()), rel=1e-12, abs=1e-15)


@given(st.integers(1, 30).flatmap(lambda n: st.tuples(
    *(arrays(np.float64, n, elements=st.floats(-1e6, 1e6)) for _ in range(3)))))
def test_mae_triangle(abc):
    a, b, c = abc
    assert mae(a, c) <= mae(a, b) + mae(b, c) + 1e-9 * (1 + mae(a, b) + mae(b, c))


@given(pair())
def test_equal_totals_identity(ab):
    a, b = ab
    assume(a.sum() > 0 and b.sum() > 1e-200)
    b = b * (a.sum() / b.sum())
    assert cpc(a, b) == pytest.approx(np.minimum(a, b).sum() / a.sum(), rel=1e-12)
