import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from ddrsurv.exceptions import ParameterError
from ddrsurv.parametric import (
    Exponential,
    LogNormal,
    Weibull,
    fit_exponential,
    fit_parametric,
    mean_survival_param,
    nll_gradient,
    nll_loss,
    survival_at,
)


def test_exponential_at_zero():
    assert survival_at(Exponential(1.0), 0.0) == 1.0


def test_weibull_shape_one_is_exponential():
    assert survival_at(Weibull(2.0, 1.0), 2.0) == pytest.approx(math.exp(-1), abs=1e-12)
    assert survival_at(Weibull(2.0, 1.0), 2.0) == pytest.approx(survival_at(Exponential(0.5), 2.0), abs=1e-12)


def test_lognormal_median():
    assert survival_at(LogNormal(0.0, 1.0), 1.0) == pytest.approx(0.5, abs=1e-15)


def test_means():
    assert mean_survival_param(Exponential(0.5)) == 2.0
    assert mean_survival_param(Weibull(3.0, 1.0)) == pytest.approx(3.0)
    assert abs(mean_survival_param(Weibull(1.0, 2.0)) - math.sqrt(math.pi) / 2) < 1e-6


def test_weibull_mean_matches_quadrature():
    w = Weibull(1.0, 2.0)
    val, _ = integrate.quad(lambda t: w.survival(t), 0, np.inf)
    assert mean_survival_param(w) == pytest.approx(val, abs=1e-8)


def test_nll_hand_values():
    assert nll_loss(Exponential(1.0), [1.0]) == pytest.approx(1.0)
    assert nll_loss(LogNormal(0.0, 1.0), [1.0]) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-6)


def test_nll_matches_scipy():
    t = np.array([0.3, 1.2, 2.5])
    assert nll_loss(Weibull(1.5, 0.7), t) == pytest.approx(-stats.weibull_min(0.7, scale=1.5).logpdf(t).sum())
    assert nll_loss(LogNormal(0.2, 0.6), t) == pytest.approx(-stats.lognorm(0.6, scale=math.exp(0.2)).logpdf(t).sum())


def test_bad_parameters_rejected():
    with pytest.raises(ParameterError):
        Exponential(-1.0)
    with pytest.raises(ParameterError):
        Weibull(1.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 20), st.lists(st.floats(0.01, 30), min_size=1, max_size=20))
def test_weibull_shape_one_matches_exponential_everywhere(scale, times):
    w, e = Weibull(scale, 1.0), Exponential(1.0 / scale)
    t = np.asarray(times)
    np.testing.assert_allclose(w.survival(t), e.survival(t), rtol=1e-10, atol=1e-300)
    assert nll_loss(w, t) == pytest.approx(nll_loss(e, t), rel=1e-10, abs=1e-10)


def _central_fd(make, params, times, h=1e-6):
    out = []
    for j in range(len(params)):
        up, dn = list(params), list(params)
        up[j] += h
        dn[j] -= h
        out.append((nll_loss(make(*up), times) - nll_loss(make(*dn), times)) / (2 * h))
    return np.array(out)


@pytest.mark.parametrize("make,lo,hi", [
    (Exponential, [0.2], [3.0]),
    (Weibull, [0.3, 0.4], [3.0, 3.0]),
    (LogNormal, [-1.0, 0.3], [1.0, 2.0]),
])
def test_nll_gradient_matches_finite_differences(make, lo, hi):
    rng = np.random.default_rng(3)
    times = rng.exponential(size=25) + 0.05
    for _ in range(10):
        params = list(rng.uniform(lo, hi))
        g = nll_gradient(make(*params), times)
        fd = _central_fd(make, params, times)
        np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6)


def test_exponential_mle_closed_form():
    assert fit_exponential([1.0, 2.0, 3.0]).rate == pytest.approx(0.5)


def test_regression_recovers_exponential_rate_under_ltrc():
    rng = np.random.default_rng(0)
    n = 4000
    x = rng.normal(size=(n, 1))
    T = rng.exponential(1.0 / np.exp(0.5 + 0.8 * x[:, 0]))
    C = rng.exponential(2.0, size=n)
    entry = 0.1
    keep = T >= entry
    t, d = np.minimum(T, C)[keep], (T <= C)[keep].astype(float)
    # censoring before entry removes the record from the likelihood
    fit = fit_parametric("exponential", x[keep], t, d, entry=entry)
    np.testing.assert_allclose(fit.coef, [0.5, 0.8], atol=0.08)


def test_regression_matches_scipy_weibull_mle_without_covariates():
    rng = np.random.default_rng(1)
    t = stats.weibull_min(1.7, scale=2.0).rvs(800, random_state=rng)
    fit = fit_parametric("weibull", np.empty((t.size, 0)), t, np.ones_like(t))
    c, _, scale = stats.weibull_min.fit(t, floc=0)
    dist = fit.distribution(np.empty(0))
    assert dist.shape == pytest.approx(c, rel=1e-3)
    assert dist.scale == pytest.approx(scale, rel=1e-3)


def test_conditional_mean_is_memoryless_for_exponential():
    fit = fit_parametric("exponential", np.zeros((3, 0)), [1.0, 2.0, 3.0], [1, 1, 1])
    assert fit.conditional_mean(np.zeros((1, 0)), 5.0)[0] == pytest.approx(5.0 + 2.0, rel=1e-5)
