import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddrsurv.kaplan_meier import km_fit, km_median, risk_table
from ddrsurv.parametric import Exponential
from ddrsurv.simulation import SimConfig, generate
from ddrsurv.survival_math import StepSurvival


def test_hand_product_limit():
    s = km_fit([1, 2, 3], [1, 0, 1])
    np.testing.assert_allclose(s([0.5, 1, 2, 2.9, 3]), [1, 2 / 3, 2 / 3, 2 / 3, 0])


def test_single_subject():
    s = km_fit([1.0], [1])
    assert s(0.99) == 1 and s(1.0) == 0


def test_risk_table_counts():
    rt = risk_table([1, 2, 2, 3], [1, 1, 0, 0])
    np.testing.assert_array_equal(rt.times, [1, 2])
    np.testing.assert_array_equal(rt.n_at_risk, [4, 3])
    np.testing.assert_array_equal(rt.events, [1, 1])
    np.testing.assert_array_equal(rt.censored, [0, 2])


def test_delayed_entry_shrinks_early_risk_set():
    # the late entrant is not at risk at t = 1
    s = km_fit([1, 2, 3], [1, 1, 1], entry_times=[0, 0, 1.5])
    assert s(1.0) == pytest.approx(0.5)
    assert s(2.0) == pytest.approx(0.25)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 50), min_size=1, max_size=40, unique=True))
def test_no_censoring_equals_ecdf(times):
    t = np.asarray(times)
    s = km_fit(t, np.ones_like(t))
    grid = np.concatenate([t, t + 1e-6, [0.0]])
    ecdf = np.array([np.mean(t > g) for g in grid])
    np.testing.assert_allclose(s(grid), ecdf, atol=1e-12)


def test_matches_statsmodels_with_censoring():
    sm = pytest.importorskip("statsmodels.api")
    rng = np.random.default_rng(5)
    t = np.round(rng.exponential(size=60), 2) + 0.01
    d = (rng.uniform(size=60) < 0.7).astype(int)
    ref = sm.SurvfuncRight(t, d)
    s = km_fit(t, d)
    np.testing.assert_allclose(s(ref.surv_times), ref.surv_prob, rtol=1e-12)


def test_median_of_exponential():
    assert km_median(Exponential(1.0).curve()) == pytest.approx(math.log(2), abs=1e-6)


def test_median_of_flat_curve_is_undefined():
    assert km_median(StepSurvival([1.0], [1.0])) is None


def test_median_of_step_curve():
    assert km_median(km_fit([1, 2, 3, 4], [1, 1, 1, 1])) == 2.0


def test_treated_arm_median_band():
    meds = []
    for seed in range(10):
        ds, _ = generate(SimConfig(seed=seed))
        m = ds.a == 1
        meds.append(km_median(km_fit(ds.t_obs[m], ds.delta[m], ds.tau[m])))
    assert all(1.1 <= v <= 2.3 for v in meds)


def test_arm_medians_without_censoring_at_large_n():
    rng = np.random.default_rng(0)
    for mean in (2.0, 1.0):
        s = km_fit(rng.exponential(mean, 50000), np.ones(50000))
        assert km_median(s) == pytest.approx(mean * math.log(2), rel=0.03)
