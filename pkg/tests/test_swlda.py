import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sirtgp._io import read_csv
from sirtgp.errors import InvalidInputError
from sirtgp.swlda import (SwldaModel, _entry_pvalues, _removal_pvalues, discriminant, fit_swlda,
                          swlda_scores, swlda_support, write_swlda_csv)

NULL_SEEDS = 300


def null_problem(seed, n=500, p=20):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = (rng.random(n) < 0.5).astype(float)
    return X, y


def empty_rate_oracle(p=20, alpha=0.05, n=500, draws=20000, seed=99):
    """Share of null problems where no feature passes the first entry test.

    Computed from first-step marginal correlations alone, independent of the
    stepwise implementation: the t statistic of a simple regression slope.
    """
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((draws, n))
    hits = 0
    for block in np.array_split(np.arange(draws), 40):
        X = rng.standard_normal((len(block), n, p))
        yc = y[block] - y[block].mean(axis=1, keepdims=True)
        Xc = X - X.mean(axis=1, keepdims=True)
        r = np.einsum("bn,bnp->bp", yc, Xc) / np.sqrt(
            (yc**2).sum(axis=1)[:, None] * (Xc**2).sum(axis=1))
        t = r * np.sqrt((n - 2) / (1 - r**2))
        pv = 2 * stats.t.sf(np.abs(t), n - 2)
        hits += int((pv.min(axis=1) >= alpha).sum())
    return hits / draws


@pytest.fixture(scope="module")
def null_empty_rate():
    return np.mean([len(fit_swlda(*null_problem(s)).selected) == 0 for s in range(NULL_SEEDS)])


def test_null_empty_rate_matches_oracle(null_empty_rate):
    oracle = empty_rate_oracle()
    assert oracle == pytest.approx(0.95**20, abs=0.02)
    # binomial sd at 300 seeds is about 0.028; allow four
    assert null_empty_rate == pytest.approx(oracle, abs=0.11)


@pytest.mark.xfail(strict=True, reason="unattainable: with 20 independent entry tests at 0.05, "
                   "the empty-model rate is about 0.36, not 0.90")
def test_null_model_mostly_empty(null_empty_rate):
    assert null_empty_rate >= 0.90


def test_perfect_predictor_enters_first():
    X, y = null_problem(1, n=200, p=10)
    X[:, 6] = y
    m = fit_swlda(X, y)
    assert m.selected[0] == 6


def test_duplicate_columns_not_both_selected():
    rng = np.random.default_rng(2)
    n = 300
    y = (rng.random(n) < 0.5).astype(float)
    X = rng.standard_normal((n, 6))
    X[:, 1] = y + rng.normal(0, 0.5, n)
    X[:, 4] = X[:, 1]
    m = fit_swlda(X, y)
    assert len({1, 4} & set(m.selected)) == 1


def test_entry_pvalue_is_slope_test():
    X, y = null_problem(3, n=120, p=5)
    Xc, yc = X - X.mean(0), y - y.mean()
    pv = _entry_pvalues(Xc, yc, [], np.linalg.norm(Xc, axis=0))
    for j in range(5):
        assert pv[j] == pytest.approx(stats.linregress(X[:, j], y).pvalue, rel=1e-8)


def test_removal_pvalue_matches_entry_pvalue():
    # for a one-feature model both tests are the same slope test
    X, y = null_problem(4, n=150, p=3)
    Xc, yc = X - X.mean(0), y - y.mean()
    entry = _entry_pvalues(Xc, yc, [], np.linalg.norm(Xc, axis=0))[2]
    assert _removal_pvalues(Xc[:, [2]], yc)[0] == pytest.approx(entry, rel=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_fixpoint_invariants(seed):
    rng = np.random.default_rng(seed)
    n, p = 150, 12
    X = rng.standard_normal((n, p))
    y = (X[:, 0] + X[:, 3] + rng.normal(0, 2, n) > 0).astype(float)
    m = fit_swlda(X, y, max_features=5)
    assert len(m.selected) <= 5
    assert len(set(m.selected)) == len(m.selected)
    Xc, yc = X - X.mean(0), y - y.mean()
    if m.selected:
        assert np.all(_removal_pvalues(Xc[:, list(m.selected)], yc) <= 0.10)
    if len(m.selected) < 5:
        pv = _entry_pvalues(Xc, yc, list(m.selected), np.linalg.norm(Xc, axis=0))
        assert not np.any(pv[np.isfinite(pv)] < 0.05)


def test_deterministic():
    X, y = null_problem(5, n=200, p=30)
    X[:, :3] += y[:, None]
    a, b = fit_swlda(X, y), fit_swlda(X, y)
    assert a.selected == b.selected and np.array_equal(a.weights, b.weights)


def test_input_validation():
    X, y = null_problem(6, n=40, p=3)
    with pytest.raises(InvalidInputError):
        fit_swlda(X[:10], y[:10])
    with pytest.raises(InvalidInputError):
        fit_swlda(X, np.zeros(40))
    with pytest.raises(InvalidInputError):
        fit_swlda(X, y, p_enter=0.2, p_remove=0.1)


def test_empty_model_scores_half():
    m = SwldaModel((), np.zeros(0), 0.3, 4)
    assert np.all(swlda_scores(m, np.ones((5, 4))) == 0.5)
    assert np.all(swlda_support(m, 2, 2) == 0)


def test_scores_monotone_in_discriminant():
    m = SwldaModel((0, 2), np.array([1.0, -2.0]), 0.1, 3)
    X = np.random.default_rng(7).standard_normal((50, 3))
    d, s = discriminant(m, X), swlda_scores(m, X)
    order = np.argsort(d)
    assert np.all(np.diff(s[order]) >= 0)
    assert np.all((s >= 0) & (s <= 1))


def test_support_index_mapping():
    m = SwldaModel((0,), np.array([1.0]), 0.0, 12)
    mask = swlda_support(m, 3, 4)
    assert mask[0, 0] == 1 and mask.sum() == 1
    m = SwldaModel((5,), np.array([1.0]), 0.0, 12)
    assert swlda_support(m, 3, 4)[1, 1] == 1
    with pytest.raises(InvalidInputError):
        swlda_support(m, 2, 4)


def test_model_csv(tmp_path):
    m = SwldaModel((3, 1), np.array([0.5, -1.0]), 0.25, 4)
    write_swlda_csv(tmp_path / "m.csv", m)
    rows = read_csv(tmp_path / "m.csv")
    assert [r["feature_index"] for r in rows] == ["3", "1", "intercept"]
    assert float(rows[2]["weight"]) == 0.25
