import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drivencce.analysis import (
    METHODS,
    FitResult,
    bootstrap_errors,
    fit_power_law,
    fit_scaling,
    fit_stretched,
    outlier_mask,
)
from drivencce.dynamics import CoherenceCurve

T = np.linspace(0.05, 40, 150)


def _stretched(t2, p, t=T):
    return CoherenceCurve(t, np.exp(-((t / t2) ** p)))


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("p", [0.5, 0.75, 1.0, 1.25])
def test_recovers_synthetic_parameters(method, p):
    f = fit_stretched(_stretched(11.0, p), method)
    assert f.T2 == pytest.approx(11.0, rel=1e-3)
    assert f.p == pytest.approx(p, rel=1e-3)
    assert f.method == method and f.fit_fraction == 0.6


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 30.0), st.floats(0.5, 1.5), st.floats(0.1, 10.0))
def test_time_rescaling_equivariance(t2, p, s):
    t = np.linspace(t2 / 50, 4 * t2, 80)
    a = fit_stretched(_stretched(t2, p, t), "linear")
    b = fit_stretched(_stretched(t2 * s, p, t * s), "linear")
    assert b.T2 == pytest.approx(s * a.T2, rel=1e-6)
    assert b.p == pytest.approx(a.p, rel=1e-6)


def test_fit_window_uses_leading_fraction():
    f = fit_stretched(_stretched(11.0, 1.0), "linear", fit_fraction=0.5)
    assert f.points_used == 75


def test_outlier_is_masked():
    c = _stretched(11.0, 0.75)
    v = c.values.copy()
    v[20] = 0.3 * v[20]
    f = fit_stretched((c.times, v), "linear")
    assert c.times[20] in f.masked
    assert f.T2 == pytest.approx(11.0, rel=1e-3)


def test_outlier_mask_clean_line():
    x = np.linspace(1, 5, 20)
    assert not outlier_mask(x, 2 * np.log(x) + 1).any()


def test_rejects_non_decaying_curves():
    with pytest.raises(ValueError):
        fit_stretched((T, np.ones_like(T)), "linear")
    with pytest.raises(ValueError):
        fit_stretched((T, np.linspace(0.5, 0.99, T.size)), "linear")
    with pytest.raises(ValueError):
        fit_stretched(_stretched(11.0, 1.0), "bogus")


def test_fit_result_physical():
    with pytest.raises(ValueError):
        FitResult(-1.0, 1.0, "linear", 0.6, 10, 0.0)


def test_scaling_exact_and_noisy():
    pts = [(rho, 217.0 / rho) for rho in (1, 2, 5, 10, 20)]
    s = fit_scaling(pts)
    assert s.A == pytest.approx(217.0, rel=1e-12) and s.uncertainty < 1e-9
    noisy = [(r, t * (1 + 0.05 * (-1) ** k)) for k, (r, t) in enumerate(pts)]
    assert fit_scaling(noisy).uncertainty > 0
    with pytest.raises(ValueError):
        fit_scaling([(5, 1.0), (5, 2.0)])


def test_power_law():
    pts = [(rho, 3.0 * rho**-0.9) for rho in (5, 10, 20)]
    pl = fit_power_law(pts)
    assert pl.x == pytest.approx(0.9, rel=1e-10) and pl.B == pytest.approx(3.0, rel=1e-10)


def test_bootstrap_identical_curves_have_no_spread():
    data = np.tile(_stretched(11.0, 0.8).values, (10, 1))
    rep = bootstrap_errors(data, [2, 5], 50, seed=0, times=T)
    for n in (2, 5):
        assert rep.sigma_T2_pct[n] < 1e-8 and rep.sigma_p_pct[n] < 1e-8
        assert rep.failures[n] == 0


def test_bootstrap_shrinks_with_sample_size():
    r = np.random.default_rng(1)
    data = np.array([np.exp(-((T / t2) ** 0.8)) for t2 in r.normal(11, 2, 60)])
    rep = bootstrap_errors(data, [5, 20, 45], 300, seed=2, times=T)
    s = [rep.sigma_T2_pct[n] for n in (5, 20, 45)]
    assert s[0] > s[1] > s[2]
    assert s[0] * math.sqrt(5) == pytest.approx(s[2] * math.sqrt(45), rel=0.3)


def test_bootstrap_guards():
    with pytest.raises(ValueError):
        bootstrap_errors([], [1], 10, 0)
    with pytest.raises(ValueError):
        bootstrap_errors(np.ones((3, T.size)), [5], 10, 0, times=T)
