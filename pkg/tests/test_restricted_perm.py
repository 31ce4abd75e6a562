import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confaudit import linear_scm as L
from confaudit import restricted_perm as R
from confaudit.assoc_stats import covariance, partial_covariance
from confaudit.errors import DegenerateConfounderError, SpecificationError


def exact_null_mean(x, y, a):
    """Average of Cov(x, y*) over every within-level permutation."""
    levels = [np.flatnonzero(a == v) for v in np.unique(a)]
    total, count = 0.0, 0
    for perms in itertools.product(*(itertools.permutations(g) for g in levels)):
        ys = y.copy()
        for g, p in zip(levels, perms):
            ys[g] = y[list(p)]
        total += np.cov(x, ys)[0, 1]
        count += 1
    return total / count


def test_shuffle_examples():
    y = np.array([1.0, 0.0, 1.0, 0.0])
    a = np.array([0, 0, 1, 1])
    ys = R.restricted_shuffle(y, a, seed=3)
    assert sorted(ys[:2]) == [0.0, 1.0] and sorted(ys[2:]) == [0.0, 1.0]
    assert np.array_equal(R.restricted_shuffle(y, np.arange(4), 0), y)
    one = R.restricted_shuffle(np.arange(20.0), np.zeros(20), 1)
    assert sorted(one) == list(range(20)) and not np.array_equal(one, np.arange(20.0))


def test_shuffle_length_mismatch():
    with pytest.raises(SpecificationError):
        R.restricted_shuffle(np.zeros(3), np.zeros(4), 0)


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(6, 30))
def test_shuffle_preserves_level_multisets(seed, k, n):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, k, n)
    y = rng.normal(size=n).round(2)
    ys = R.restricted_shuffle(y, a, seed)
    for v in np.unique(a):
        assert sorted(ys[a == v]) == sorted(y[a == v])


@pytest.mark.parametrize("seed", range(5))
def test_analytic_mean_equals_exact_enumeration(seed):
    rng = np.random.default_rng(seed)
    a = np.array([0, 0, 0, 0, 1, 1, 1, 1, 1], dtype=float)
    rng.shuffle(a)
    x = rng.normal(size=9) + a
    y = rng.normal(size=9) + 0.5 * a
    assert R.analytic_null_mean(x, y, a) == pytest.approx(exact_null_mean(x, y, a), abs=1e-12)


def test_multilevel_mean_is_between_level_covariance():
    rng = np.random.default_rng(1)
    a = np.array([0, 0, 1, 1, 1, 2, 2], dtype=float)
    x, y = rng.normal(size=7), rng.normal(size=7)
    between = sum(
        (a == v).sum() * (x[a == v].mean() - x.mean()) * (y[a == v].mean() - y.mean()) for v in np.unique(a)
    ) / (a.size - 1)
    assert exact_null_mean(x, y, a) == pytest.approx(between, abs=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_eq1_identity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 200))
    a = (rng.random(n) < 0.5).astype(float)
    a[0], a[1] = 0.0, 1.0
    y = rng.normal() * a + rng.normal(size=n)
    x = rng.normal() * y + rng.normal() * a + rng.normal(size=n)
    lhs = covariance(x, y) - partial_covariance(x, y, a)
    assert lhs == pytest.approx(R.analytic_null_mean(x, y, a), abs=1e-10)


def test_perm_null_mean_matches_theorem(spec_b):
    d = L.simulate(spec_b, 800, 3)
    null = R.perm_null_covariance(d.x[:, 0], d.y, d.a, B=5000, seed=9)
    assert null.B == 5000
    assert abs(null.perm_mean - null.analytic_mean) <= 4 * null.perm_sd / math.sqrt(null.B)
    assert null.observed == pytest.approx(covariance(d.x[:, 0], d.y))


def test_perm_null_preserves_ay_covariance(spec_b):
    d = L.simulate(spec_b, 300, 4)
    for s in range(5):
        ys = R.restricted_shuffle(d.y, d.a, s)
        assert covariance(ys, d.a) == pytest.approx(covariance(d.y, d.a), abs=1e-12)


def test_perm_null_deterministic_and_chunked(spec_b):
    d = L.simulate(spec_b, 200, 4)
    n1 = R.perm_null_covariance(d.x[:, 0], d.y, d.a, B=600, seed=2)
    n2 = R.perm_null_covariance(d.x[:, 0], d.y, d.a, B=600, seed=2)
    assert np.array_equal(n1.stats, n2.stats)
    # the first 250 draws do not depend on how many are requested
    n3 = R.perm_null_covariance(d.x[:, 0], d.y, d.a, B=250, seed=2)
    assert np.array_equal(n1.stats[:250], n3.stats)


def test_constant_y_gives_zero():
    a = np.array([0, 1, 0, 1, 1, 0], dtype=float)
    null = R.perm_null_covariance(np.arange(6.0), np.full(6, 2.0), a, B=100)
    assert np.all(null.stats == 0) and null.analytic_mean == 0
    assert R.within_level_null_check(np.arange(6.0), np.full(6, 2.0), a, B=50) == 0


def test_independent_confounder_mean_vanishes():
    rng = np.random.default_rng(0)
    n = 50_000
    a = (rng.random(n) < 0.5).astype(float)
    x, y = rng.normal(size=n), rng.normal(size=n)
    assert abs(R.analytic_null_mean(x, y, a)) < 16 / n


def test_degenerate_confounder():
    with pytest.raises(DegenerateConfounderError):
        R.perm_null_covariance(np.arange(5.0), np.arange(5.0), np.ones(5))
    with pytest.raises(DegenerateConfounderError):
        R.within_level_null_check(np.arange(5.0), np.arange(5.0), np.ones(5))


# Population values with the full Var(X) formula (see linear_scm).
BIAS = {"a": (0.123288, 0.123288, 0.0), "b": (0.163214, 0.093265, 0.069949), "c": (0.077076, 0.0, 0.077076)}


@pytest.mark.parametrize("name", ["a", "b", "c"])
def test_bias_decomposition(name):
    m = L.path_coefficients(L.preset(name))
    analytic, conf, bias = R.bias_decomposition(m)
    assert (analytic, conf, bias) == pytest.approx(BIAS[name], abs=1e-6)
    assert analytic - conf == pytest.approx(m.theta_xy * m.theta_ya**2, abs=1e-15)
    assert (bias == 0) == (m.theta_xy * m.theta_ya**2 == 0)


def test_confounder_only_estimate_on_standardized_data(spec_b):
    z = L.standardize(L.simulate(spec_b, 100_000, 8))
    m = L.path_coefficients(spec_b)
    est = R.confounder_only_estimate(z.x[:, 0], z.y, z.a)
    assert est == pytest.approx(m.theta_xa * m.theta_ya, abs=4 / math.sqrt(z.n))


def test_within_level_check(spec_b):
    d = L.simulate(spec_b, 2000, 6)
    mean, per = R.within_level_null_check(d.x[:, 0], d.y, d.a, B=2000, seed=1, return_stats=True)
    assert abs(mean) < 4 * np.std(per, ddof=1) / math.sqrt(2000)


def test_within_level_singletons_are_zero():
    x = np.array([1.0, 2.0, 5.0])
    assert R.within_level_null_check(x, x, np.array([0.0, 1.0, 2.0]), B=10) == 0.0
