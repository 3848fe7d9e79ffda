import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddrsurv import Dataset
from ddrsurv.censoring import (
    CensoringModel,
    fit_censoring,
    martingale_increments,
    martingale_matrix,
)
from ddrsurv.exceptions import ValidationError
from ddrsurv.kaplan_meier import km_fit
from ddrsurv.survival_math import StepSurvival

from conftest import random_ltrc


def _ds(t, d, tau=0.0, x=None):
    n = len(t)
    x = np.zeros((n, 1)) if x is None else x
    return Dataset(x=x, z=np.zeros((n, 1)), a=np.zeros(n), t_obs=t, delta=d, tau=tau)


def test_no_censoring_gives_unit_curve():
    with pytest.warns(UserWarning):
        g = fit_censoring(_ds([1.0, 2.0, 3.0], [1, 1, 1]), "km")
    np.testing.assert_array_equal(g.survival(np.array([0.0, 1.0, 10.0])), [1, 1, 1])


def test_km_censoring_recovers_exponential():
    rng = np.random.default_rng(0)
    n, rate = 2000, 0.7
    T = rng.exponential(1.0, n)
    C = rng.exponential(1.0 / rate, n)
    ds = _ds(np.minimum(T, C), (T <= C).astype(float))
    g = fit_censoring(ds, "km")
    grid = np.linspace(0, np.quantile(ds.t_obs, 0.9), 200)
    assert np.max(np.abs(g.survival(grid, floor=False) - np.exp(-rate * grid))) < 0.05


def test_flipping_twice_recovers_direct_fit():
    rng = np.random.default_rng(1)
    ds = random_ltrc(rng, 80)
    once = 1.0 - ds.delta
    twice = 1.0 - once
    a = km_fit(ds.t_obs, twice, ds.tau)
    b = km_fit(ds.t_obs, ds.delta, ds.tau)
    np.testing.assert_array_equal(a.values, b.values)


def test_cox_censoring_model_uses_covariates():
    rng = np.random.default_rng(2)
    n = 600
    r = rng.normal(size=(n, 1))
    T = rng.exponential(2.0, n)
    C = rng.exponential(1.0 / np.exp(0.8 * r[:, 0]))
    ds = _ds(np.minimum(T, C), (T <= C).astype(float), x=r)
    g = fit_censoring(ds, "cox")
    assert g.fitted.beta[0] == pytest.approx(0.8, abs=0.2)


def test_floor_applies():
    g = CensoringModel.from_callable(lambda t, R: np.full(t.shape, 0.01))
    assert g.survival(np.array([1.0]))[0] == 0.05
    assert g.survival(np.array([1.0]), floor=False)[0] == 0.01


def test_uncensored_record_under_unit_curve_has_zero_increments():
    ds = _ds([1.0, 2.0], [1, 1])
    dM = martingale_increments(CensoringModel.constant(), ds[0], grid=np.array([0.5, 1.0, 2.0]))
    np.testing.assert_array_equal(dM, 0)


def test_censored_record_at_single_knot():
    # G drops from 1 to 0.8 at the record's own censoring time
    g = CensoringModel("km", StepSurvival([1.0], [0.8]))
    dM = martingale_increments(g, _ds([1.0], [0])[0])
    assert dM.tolist() == pytest.approx([0.8])


def test_grid_must_contain_observed_time():
    with pytest.raises(ValidationError):
        martingale_matrix(CensoringModel.constant(), [1.5], [0], grid=np.array([1.0, 2.0]))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 30), method=st.sampled_from(["km", "cox"]))
def test_martingale_bridge_identity(seed, n, method):
    rng = np.random.default_rng(seed)
    ds = random_ltrc(rng, n, truncated=bool(seed % 2))
    if ds.n < 2 or ds.delta.sum() == ds.n:
        return
    g = fit_censoring(ds, method)
    _, dM, G = martingale_matrix(g, ds.t_obs, ds.delta_tau, ds.r)
    lhs = np.sum(dM / G, axis=1)
    rhs = 1.0 - ds.delta_tau / g.survival(ds.t_obs, ds.r)
    np.testing.assert_allclose(lhs, rhs, atol=1e-8)
