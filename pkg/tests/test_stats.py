import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rydkin.errors import FitError, UndefinedStatisticError, ValidationError
from rydkin.stats import (BimodalParams, CountRecord, Curve, bimodal_predict, collapse_check,
                          fit_powerlaw_beta, growth_rate_curve, mandel_q, moving_average, thin_counts)


def test_mandel_q_examples():
    rng = np.random.default_rng(0)
    assert abs(mandel_q(CountRecord(tuple(rng.poisson(20, 100000))))) < 0.02
    assert mandel_q(CountRecord((7,) * 10)) == -1.0
    assert mandel_q(CountRecord((0, 0, 40, 40))) == pytest.approx(19.0, abs=1e-12)


def test_mandel_q_errors_and_ddof():
    with pytest.raises(UndefinedStatisticError):
        mandel_q(CountRecord((0, 0, 0)))
    with pytest.raises(ValidationError):
        CountRecord(())
    with pytest.raises(ValidationError):
        CountRecord((1, -2))
    r = CountRecord((0, 0, 40, 40))
    assert mandel_q(r, ddof=1) == pytest.approx(400 * 4 / 3 / 20 - 1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=40).filter(lambda x: sum(x) > 0),
       st.integers(0, 1000))
def test_mandel_q_reorder_and_duplicate_invariance(shots, seed):
    q = mandel_q(CountRecord(tuple(shots)))
    perm = np.random.default_rng(seed).permutation(shots)
    assert mandel_q(CountRecord(tuple(perm))) == pytest.approx(q, abs=1e-12)
    assert mandel_q(CountRecord(tuple(shots) * 2)) == pytest.approx(q, abs=1e-12)


def test_thin_identity_and_poisson():
    r = CountRecord((1, 2, 3))
    assert thin_counts(r, 1.0, np.random.default_rng(0)) == r
    rng = np.random.default_rng(1)
    pr = CountRecord(tuple(rng.poisson(30, 100000)))
    assert abs(mandel_q(thin_counts(pr, 0.4, rng))) < 0.02


def _q_stderr(x):
    # delta-method standard error of Var/mean from the bootstrap of a sample
    rng = np.random.default_rng(99)
    qs = []
    for _ in range(200):
        s = rng.choice(x, size=x.size)
        qs.append(s.var() / s.mean() - 1)
    return np.std(qs)


def test_thinning_law_bimodal_record():
    rng = np.random.default_rng(2)
    x = np.where(rng.random(100000) < 0.3, 2, 35)
    r = CountRecord(tuple(x))
    thin = thin_counts(r, 0.4, rng)
    q, qt = mandel_q(r), mandel_q(thin)
    se = _q_stderr(thin.array())
    assert abs(qt - 0.4 * q) < 3 * se


@settings(max_examples=10, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=5, max_size=12).filter(lambda x: sum(x) > 0),
       st.floats(0.1, 0.9))
def test_thinning_law_property(base, eta):
    rng = np.random.default_rng(len(base))
    x = np.asarray(base)[rng.integers(0, len(base), size=20000)]
    r = CountRecord(tuple(x))
    thin = thin_counts(r, eta, rng)
    if thin.array().sum() == 0:
        return
    se = _q_stderr(thin.array())
    assert abs(mandel_q(thin) - eta * mandel_q(r)) < 3 * se + 1e-3


def test_bimodal_examples():
    m, q = bimodal_predict(BimodalParams(3.0, 40.0, 1e6))
    assert m == pytest.approx(40.0) and q == pytest.approx(-1.0)
    m, q = bimodal_predict(BimodalParams(5.0, 40.0, 0.0))
    assert m == 5.0 and q == pytest.approx(-1.0)
    m, q = bimodal_predict(BimodalParams(0.0, 40.0, math.log(2.0)))
    assert m == pytest.approx(20.0, abs=1e-12) and q == pytest.approx(19.0, abs=1e-12)
    assert mandel_q(CountRecord((0, 40))) == pytest.approx(q, abs=1e-12)
    with pytest.raises(UndefinedStatisticError):
        bimodal_predict(BimodalParams(0.0, 40.0, 0.0))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 20), st.floats(0.5, 60), st.floats(0.01, 5), st.floats(0.05, 1.0))
def test_bimodal_matches_two_point_distribution(n1, dn, seeds, eta):
    b = BimodalParams(n1, n1 + dn, seeds, eta)
    mean, q = bimodal_predict(b)
    a = math.exp(-seeds / eta)
    vals, w = np.array([b.n1, b.n2]), np.array([a, 1 - a])
    m2 = (w * vals).sum()
    var = (w * (vals - m2) ** 2).sum()
    assert mean == pytest.approx(m2, rel=1e-12, abs=1e-12)
    assert q == pytest.approx(var / m2 - 1, rel=1e-12, abs=1e-12)


def test_moving_average_shrinks_at_edges():
    y = np.array([1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    out = moving_average(y, 5)
    assert out[0] == 1.0 and out[1] == pytest.approx(7 / 3) and out[2] == pytest.approx(31 / 5)


def test_growth_rate_examples():
    t = np.linspace(0, 10, 101)
    g = growth_rate_curve(t, 3.0 * t, n_g=10)
    assert np.allclose(g.rate, 0.3, atol=1e-12)
    t = np.linspace(0, 1, 2001)
    gam, ng = 2.0, 50
    g = growth_rate_curve(t, ng * (1 - np.exp(-gam * t)), n_g=ng, window=3)
    assert g.rate[0] == pytest.approx(gam, rel=0.02)
    with pytest.raises(ValidationError):
        growth_rate_curve(t[:3], t[:3], 1, window=5)
    with pytest.raises(ValidationError):
        growth_rate_curve(t, t, 1, window=4)


def test_growth_rate_spacing():
    t = np.linspace(0, 1, 11)
    g = growth_rate_curve(t, np.full(11, 8.0), n_g=1, volume=64.0, dimension=3)
    assert np.allclose(g.spacing, 2.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.integers(0, 100))
def test_growth_rate_time_shift(shift, seed):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(0, 10, 30)) + np.arange(30) * 1e-3
    y = np.cumsum(rng.random(30))
    a = growth_rate_curve(t, y, 30)
    b = growth_rate_curve(t + shift, y, 30)
    assert np.allclose(a.rate, b.rate, rtol=1e-6, atol=1e-9)


SYN_OMEGA = np.linspace(0.0, 0.3, 41)


def _synthetic(seed):
    rng = np.random.default_rng(seed)
    n = 2.0 * np.clip(SYN_OMEGA - 0.08, 0, None) ** 0.27
    return n * (1 + 0.01 * rng.standard_normal(n.size))


def test_fit_synthetic_dp_curve():
    f = fit_powerlaw_beta(SYN_OMEGA, _synthetic(0))
    assert f.beta == pytest.approx(0.27, abs=0.03)
    assert f.omega_c == pytest.approx(0.08, abs=0.005)
    assert 0.99 < f.goodness <= 1.0
    assert SYN_OMEGA[0] <= f.omega_c <= SYN_OMEGA[-1]


def test_fit_exact_linear():
    om = np.linspace(0, 1, 30)
    f = fit_powerlaw_beta(om, np.clip(om - 0.3, 0, None))
    assert f.beta == pytest.approx(1.0, abs=1e-6)
    assert f.omega_c == pytest.approx(0.3, abs=1e-6)


def test_fit_errors():
    with pytest.raises(ValidationError):
        fit_powerlaw_beta(np.arange(5.0), np.arange(5.0))
    with pytest.raises(FitError):
        fit_powerlaw_beta(np.arange(10.0), np.zeros(10))


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 50))
def test_fit_scale_equivariance(c, seed):
    n = _synthetic(seed)
    a = fit_powerlaw_beta(SYN_OMEGA, n)
    b = fit_powerlaw_beta(SYN_OMEGA, c * n)
    assert b.beta == pytest.approx(a.beta, abs=1e-6)
    assert b.omega_c == pytest.approx(a.omega_c, abs=1e-6)


def test_collapse_identical_and_rescaled():
    t = np.linspace(0, 10, 50)
    c = Curve(t, 1 - np.exp(-t), np.full(50, 0.01), rabi=1.0)
    assert collapse_check([c, c], dephasing=1.0).max_deviation == 0.0
    # curve at rabi/2 on a 4x longer time axis is the same function of t*rabi^2/gamma
    c2 = Curve(4 * t, 1 - np.exp(-t), np.full(50, 0.01), rabi=0.5)
    r = collapse_check([c, c2], dephasing=1.0)
    assert r.max_deviation < 1e-12 and r.max_z < 1e-9


def test_collapse_blockade_exponent():
    t = np.logspace(0, 3, 30)
    c = Curve(t, 5 * t ** (1 / 13))
    r = collapse_check([c], mode="blockade", dimension=1)
    assert r.exponents[0] == pytest.approx(1 / 13, abs=1e-12)
    assert r.expected == pytest.approx(1 / 13)
