import math

import numpy as np
import pytest

from ddrsurv import Dataset, generate, SimConfig
from ddrsurv.cox import (
    breslow_baseline,
    cox_fit,
    cox_partial_nll,
    cox_predict_survival,
    risk_sets,
)
from ddrsurv.kaplan_meier import km_fit


def _sim(rng, n=300, beta=(0.7, -0.4), entry=False):
    X = rng.normal(size=(n, len(beta)))
    T = rng.exponential(1.0 / np.exp(X @ np.asarray(beta)))
    C = rng.exponential(2.0, size=n)
    t = np.round(np.minimum(T, C), 3) + 1e-3
    d = (T <= C).astype(float)
    e = rng.uniform(0, 0.2, size=n) if entry else None
    if entry:
        keep = e < t
        return X[keep], t[keep], d[keep], e[keep]
    return X, t, d, e


def test_zero_beta_loss_is_sum_log_risk_set_sizes():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    d = np.array([1, 0, 1, 1])
    X = np.arange(4.0)[:, None]
    loss, _ = cox_partial_nll(np.zeros(1), X, t, d)
    assert loss == pytest.approx(math.log(4) + math.log(2) + math.log(1))


@pytest.mark.parametrize("beta", [-1.0, 0.0, 0.8])
def test_two_subject_hand_loss(beta):
    loss, _ = cox_partial_nll(np.array([beta]), np.array([[1.0], [0.0]]), [1.0, 2.0], [1, 1])
    assert loss == pytest.approx(-(beta - math.log(math.exp(beta) + 1)) - (0 - math.log(1)))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X, t, d, e = _sim(rng, n=80, beta=(0.5, -0.3, 0.2), entry=True)
    for _ in range(20):
        b = rng.normal(size=3)
        _, g = cox_partial_nll(b, X, t, d, e)
        fd = np.empty(3)
        for j in range(3):
            h = np.zeros(3)
            h[j] = 1e-6
            fd[j] = (cox_partial_nll(b + h, X, t, d, e)[0] - cox_partial_nll(b - h, X, t, d, e)[0]) / 2e-6
        assert np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8) < 1e-5


def test_risk_sets_respect_entry():
    rs = risk_sets([1.0, 2.0, 3.0], [1, 1, 1], entry=[0.0, 0.0, 1.5])
    # rows are subjects, columns event times
    np.testing.assert_array_equal(rs.mask, [[1, 0, 0], [1, 1, 0], [0, 1, 1]])


@pytest.mark.parametrize("entry", [False, True])
def test_fit_matches_statsmodels_breslow(entry):
    sm = pytest.importorskip("statsmodels.duration.hazard_regression")
    rng = np.random.default_rng(1)
    X, t, d, e = _sim(rng, entry=entry)
    ours = cox_fit(X, t, d, entry=e)
    ref = sm.PHReg(t, X, status=d, entry=e, ties="breslow").fit()
    np.testing.assert_allclose(ours.beta, ref.params, rtol=1e-6)
    times, H = ref.baseline_cumulative_hazard[0][:2]
    # statsmodels lists the left limit H(t-) at each event time
    np.testing.assert_allclose(ours.baseline.times, times)
    np.testing.assert_allclose(ours.baseline.values[:-1], H[1:], rtol=1e-6)


def test_breslow_right_continuous_hand_case():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    fit = cox_fit(np.array([[0.0], [1.0], [0.0], [1.0]]), t, [1, 1, 0, 1])
    r = math.exp(fit.beta[0])
    assert fit.baseline(1.0) == pytest.approx(1 / (2 + 2 * r))
    assert fit.baseline(2.0) == pytest.approx(1 / (2 + 2 * r) + 1 / (1 + 2 * r))


def test_permuted_covariate_has_null_coefficient():
    rng = np.random.default_rng(2)
    n = 400
    t = rng.exponential(size=n)
    d = (rng.uniform(size=n) < 0.8).astype(float)
    x = rng.permutation(rng.normal(size=n))[:, None]
    fit = cox_fit(x, t, d)
    b, h = fit.beta, 1e-5
    curv = (cox_partial_nll(b + h, x, t, d)[1] - cox_partial_nll(b - h, x, t, d)[1]) / (2 * h)
    se = 1.0 / math.sqrt(curv[0])
    assert abs(fit.beta[0]) < 2 * se


def test_duplicated_rows_same_estimate():
    rng = np.random.default_rng(3)
    X, t, d, _ = _sim(rng, n=150)
    a = cox_fit(X, t, d).beta
    b = cox_fit(np.vstack([X, X]), np.tile(t, 2), np.tile(d, 2)).beta
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_treatment_lowers_hazard_in_simulation():
    ds, _ = generate(SimConfig(seed=0))
    fit = cox_fit(ds.a[:, None], ds.t_obs, ds.delta, entry=ds.tau)
    assert math.exp(fit.beta[0]) < 1


def test_breslow_single_event_hand_value():
    H = breslow_baseline(np.zeros(1), np.zeros((3, 1)), [1.0, 2.0, 3.0], [1, 0, 0])
    assert H(1.0) == pytest.approx(1 / 3)


def test_breslow_without_events_is_zero():
    H = breslow_baseline(np.zeros(1), np.zeros((3, 1)), [1.0, 2.0, 3.0], [0, 0, 0])
    assert np.all(H(np.array([0.5, 1.5, 10.0])) == 0)


def test_null_covariate_baseline_close_to_km():
    rng = np.random.default_rng(4)
    n = 1000
    T = rng.exponential(size=n)
    C = rng.exponential(2.0, size=n)
    t, d = np.minimum(T, C), (T <= C).astype(float)
    x = rng.normal(size=(n, 1))
    fit = cox_fit(x, t, d)
    km = km_fit(t, d)
    grid = np.sort(t)
    s0 = np.exp(-fit.baseline(grid))
    assert np.max(np.abs(s0 - km(grid))) < 0.02


def _model():
    rng = np.random.default_rng(6)
    X, t, d, _ = _sim(rng, n=200)
    return cox_fit(X, t, d)


def test_unit_risk_score_gives_baseline_curve():
    m = _model()
    s = cox_predict_survival(m, np.zeros(2))
    np.testing.assert_allclose(s.values, np.exp(-m.baseline.values), rtol=1e-12)


def test_doubling_risk_score_squares_survival():
    m = _model()
    x1 = np.array([0.3, 0.1])
    x2 = x1 + math.log(2) * m.beta / (m.beta @ m.beta)
    s1 = cox_predict_survival(m, x1)
    s2 = cox_predict_survival(m, x2)
    np.testing.assert_allclose(s2.values, s1.values ** 2, rtol=1e-10)


def test_higher_risk_lowers_survival_and_mean():
    m = _model()
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    S = m.survival_matrix(X)[1]
    lo, hi = (0, 1) if m.beta[0] > 0 else (1, 0)
    assert np.all(S[hi] <= S[lo] + 1e-15)
    means = m.predict_mean(X)
    assert means[hi] < means[lo]


def test_conditional_mean_exceeds_threshold():
    m = _model()
    X = np.zeros((3, 2))
    c = np.array([0.0, 0.5, 50.0])
    out = m.conditional_mean(X, c)
    assert np.all(out > c)
    assert out[2] == pytest.approx(50.0 + 1.0 / m.baseline_rate)
