"""Log-normal, exponential and Weibull survival families.

Parameter conventions
---------------------
``Exponential(rate)``
    ``S(t) = exp(-rate * t)``, mean ``1 / rate``.
``Weibull(scale, shape)``
    ``S(t) = exp(-(t / scale) ** shape)``, mean ``scale * Gamma(1 + 1/shape)``.
    ``Weibull(1 / rate, 1)`` is ``Exponential(rate)``.
``LogNormal(mu, sigma)``
    ``log T ~ N(mu, sigma**2)``, mean ``exp(mu + sigma**2 / 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .exceptions import DegenerateError, ParameterError, ValidationError
from .survival_math import ParametricSurvival

__all__ = [
    "Exponential",
    "Weibull",
    "LogNormal",
    "survival_at",
    "mean_survival_param",
    "nll_loss",
    "nll_gradient",
    "fit_exponential",
    "ParametricRegression",
    "fit_parametric",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be positive, got {value}")
    return float(value)


def _times(times, strict=True):
    t = np.asarray(times, dtype=float)
    if strict and np.any(t <= 0):
        raise ParameterError("event times must be positive")
    if np.any(t < 0):
        raise ValidationError("times must be nonnegative")
    return t


class _Family:
    tag: str

    def survival(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValidationError("t must be nonnegative")
        return self._survival(t)

    def curve(self, t_max=None):
        return ParametricSurvival(self, t_max=t_max)

    def nll(self, times):
        return float(-np.sum(self.logpdf(_times(times))))

    def to_dict(self):
        return {"family": self.tag, "params": dict(zip(self.param_names, self.params))}


@dataclass(frozen=True)
class Exponential(_Family):
    rate: float
    tag = "exponential"
    param_names = ("rate",)

    def __post_init__(self):
        _positive("rate", self.rate)

    @property
    def params(self):
        return (self.rate,)

    def _survival(self, t):
        return np.exp(-self.rate * t)

    def logpdf(self, t):
        return math.log(self.rate) - self.rate * t

    def mean(self):
        return 1.0 / self.rate

    def quantile(self, p):
        return -math.log1p(-p) / self.rate

    def tail_integral(self, t):
        return math.exp(-self.rate * t) / self.rate

    def nll_grad(self, times):
        t = _times(times)
        return np.array([-t.size / self.rate + t.sum()])


@dataclass(frozen=True)
class Weibull(_Family):
    scale: float
    shape: float
    tag = "weibull"
    param_names = ("scale", "shape")

    def __post_init__(self):
        _positive("scale", self.scale)
        _positive("shape", self.shape)

    @property
    def params(self):
        return (self.scale, self.shape)

    def _survival(self, t):
        return np.exp(-((t / self.scale) ** self.shape))

    def logpdf(self, t):
        lam, k = self.scale, self.shape
        return math.log(k) - k * math.log(lam) + (k - 1) * np.log(t) - (t / lam) ** k

    def mean(self):
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    def quantile(self, p):
        return self.scale * (-math.log1p(-p)) ** (1.0 / self.shape)

    def tail_integral(self, t):
        a = 1.0 / self.shape
        return self.mean() * special.gammaincc(a, (t / self.scale) ** self.shape)

    def nll_grad(self, times):
        t = _times(times)
        lam, k = self.scale, self.shape
        u = (t / lam) ** k
        d_lam = (k / lam) * np.sum(1.0 - u)
        d_k = np.sum(-1.0 / k + math.log(lam) - np.log(t) + u * np.log(t / lam))
        return np.array([d_lam, d_k])


@dataclass(frozen=True)
class LogNormal(_Family):
    mu: float
    sigma: float
    tag = "lognormal"
    param_names = ("mu", "sigma")

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise ParameterError("mu must be finite")
        _positive("sigma", self.sigma)

    @property
    def params(self):
        return (self.mu, self.sigma)

    def _survival(self, t):
        with np.errstate(divide="ignore"):
            z = (np.log(t) - self.mu) / self.sigma
        return special.ndtr(-z)

    def logpdf(self, t):
        z = (np.log(t) - self.mu) / self.sigma
        return -np.log(t) - math.log(self.sigma) - 0.5 * _LOG_2PI - 0.5 * z * z

    def mean(self):
        return math.exp(self.mu + 0.5 * self.sigma ** 2)

    def quantile(self, p):
        return math.exp(self.mu + self.sigma * special.ndtri(p))

    def tail_integral(self, t):
        if t <= 0:
            return self.mean()
        s, m, lt = self.sigma, self.mu, math.log(t)
        return self.mean() * special.ndtr((m + s * s - lt) / s) - t * special.ndtr((m - lt) / s)

    def nll_grad(self, times):
        t = _times(times)
        r = np.log(t) - self.mu
        s = self.sigma
        return np.array([-r.sum() / s ** 2, np.sum(1.0 / s - r * r / s ** 3)])


def survival_at(family, t):
    """``S(t)`` for a parametric family; ``S(0) = 1`` for every family."""
    return family.survival(t)


def mean_survival_param(family) -> float:
    """Closed-form mean survival time of ``family``."""
    return family.mean()


def nll_loss(family, times) -> float:
    """Negative log-likelihood ``-sum log f(t_i)`` over fully observed event times."""
    return family.nll(times)


def nll_gradient(family, times) -> np.ndarray:
    """Analytic gradient of :func:`nll_loss` with respect to ``family.params``."""
    return family.nll_grad(times)


def fit_exponential(times) -> Exponential:
    """Closed-form MLE ``rate = n / sum(t)`` for uncensored times."""
    t = _times(times)
    return Exponential(t.size / t.sum())


# -- covariate regression under left truncation and right censoring ---------

def _exp_loglik(eta, t, d, e):
    (h,) = eta
    rate = np.exp(h)
    ll = d * h - rate * (t - e)
    return ll, [d - rate * (t - e)]


def _weibull_cumhaz(t, e1, k):
    with np.errstate(divide="ignore"):
        z = np.log(t) + e1
    H = np.where(t > 0, np.exp(k * np.where(t > 0, z, 0.0)), 0.0)
    z = np.where(t > 0, z, 0.0)
    return H, z


def _weibull_loglik(eta, t, d, e):
    e1, e2 = eta
    k = np.exp(e2)
    H, z = _weibull_cumhaz(t, e1, k)
    He, ze = _weibull_cumhaz(e, e1, k)
    log_h = e2 + e1 + (k - 1) * z
    ll = d * log_h - H + He
    g1 = d * k - k * H + k * He
    g2 = d * (1 + k * z) - k * z * H + k * ze * He
    return ll, [g1, g2]


def _lognormal_logsurv(t, mu, sigma):
    pos = t > 0
    safe = np.where(pos, t, 1.0)
    z = (np.log(safe) - mu) / sigma
    log_s = np.where(pos, special.log_ndtr(-z), 0.0)
    mills = np.where(pos, np.exp(-0.5 * z * z - 0.5 * _LOG_2PI - special.log_ndtr(-z)), 0.0)
    return log_s, z, mills


def _lognormal_loglik(eta, t, d, e):
    mu, ls = eta
    sigma = np.exp(ls)
    log_s, z, mills = _lognormal_logsurv(t, mu, sigma)
    log_se, ze, mills_e = _lognormal_logsurv(e, mu, sigma)
    log_f = -np.log(t) - ls - 0.5 * _LOG_2PI - 0.5 * z * z
    ll = d * log_f + (1 - d) * log_s - log_se
    g_mu = d * z / sigma + (1 - d) * mills / sigma - mills_e / sigma
    g_ls = d * (z * z - 1) + (1 - d) * mills * z - mills_e * ze
    return ll, [g_mu, g_ls]


_LOGLIK = {
    "exponential": (_exp_loglik, 1),
    "weibull": (_weibull_loglik, 2),
    "lognormal": (_lognormal_loglik, 2),
}


@dataclass
class ParametricRegression:
    """Fitted parametric survival regression with covariate-linked parameters.

    Links: exponential ``rate = exp(X b)``; Weibull ``scale = 1 / exp(X b)``,
    ``shape = exp(X g)``; log-normal ``mu = X b``, ``sigma = exp(X g)``. An
    intercept column is prepended to ``X``.
    """

    family: str
    coef: np.ndarray
    n_iter: int = 0
    converged: bool = True
    nll: float = float("nan")
    t_max: float = float("inf")
    info: dict = field(default_factory=dict)

    def _design(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.hstack([np.ones((X.shape[0], 1)), X])

    def linear_predictors(self, X):
        D = self._design(X)
        return [D @ c for c in self.coef.reshape(-1, D.shape[1])]

    def distribution(self, x):
        etas = [float(v[0]) for v in self.linear_predictors(np.atleast_2d(x))]
        if self.family == "exponential":
            return Exponential(math.exp(etas[0]))
        if self.family == "weibull":
            return Weibull(math.exp(-etas[0]), math.exp(etas[1]))
        return LogNormal(etas[0], math.exp(etas[1]))

    def predict_curve(self, x):
        return self.distribution(x).curve()

    def predict_mean(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self.distribution(row).mean() for row in X])

    def conditional_mean(self, X, c):
        """``E[T | T > c, x]`` by quadrature of each fitted curve."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = np.broadcast_to(np.asarray(c, dtype=float), (X.shape[0],))
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            fam = self.distribution(row)
            s_c = float(fam.survival(c[i]))
            out[i] = c[i] + fam.tail_integral(c[i]) / s_c if s_c > 0 else c[i]
        return out


def fit_parametric(family, X, time, event, entry=None, maxiter=200, gtol=1e-8):
    """Maximum-likelihood fit under left truncation and right censoring.

    Events contribute ``log f(t)``, censored records ``log S(t)``, and each
    record is conditioned on survival to its entry time (``- log S(entry)``).
    Minimised with BFGS on analytic gradients.
    """
    if family not in _LOGLIK:
        raise ParameterError(f"unknown family {family!r}")
    loglik, k = _LOGLIK[family]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(time, dtype=float)
    d = np.asarray(event, dtype=float)
    e = np.zeros_like(t) if entry is None else np.broadcast_to(np.asarray(entry, float), t.shape)
    if np.any(t <= 0):
        raise ValidationError("observed times must be positive")
    if d.sum() == 0:
        raise DegenerateError("no events")
    keep = e < t
    D = np.hstack([np.ones((X.shape[0], 1)), X])[keep]
    t, d, e = t[keep], d[keep], e[keep]
    n, p = D.shape

    def objective(theta):
        coefs = theta.reshape(k, p)
        etas = [D @ c for c in coefs]
        ll, grads = loglik(etas, t, d, e)
        if not np.all(np.isfinite(ll)):
            return np.inf, np.zeros_like(theta)
        g = np.concatenate([-(D.T @ gi) for gi in grads]) / n
        return -ll.sum() / n, g

    theta0 = np.zeros(k * p)
    # crude start: exponential rate from events over exposure
    rate0 = d.sum() / np.sum(t - e)
    theta0[0] = math.log(rate0) if family == "exponential" else -math.log(rate0)
    if family == "lognormal":
        theta0[0] = float(np.mean(np.log(t)))
    res = optimize.minimize(objective, theta0, jac=True, method="BFGS",
                            options={"maxiter": maxiter, "gtol": gtol})
    model = ParametricRegression(
        family=family, coef=res.x.copy(), n_iter=int(res.nit),
        converged=bool(res.success), nll=float(res.fun * n),
        t_max=float(np.max(t)), info={"message": str(res.message)},
    )
    return model
