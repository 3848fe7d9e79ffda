"""Cox proportional-hazards regression with Breslow ties and baseline.

Risk sets honour delayed entry: subject ``i`` is at risk at ``t`` when
``entry_i < t <= t_obs_i``. Subjects with ``entry >= t_obs`` never enter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .data import Dataset
from .exceptions import DegenerateError, ValidationError
from .survival_math import (
    StepCumHaz,
    StepSurvival,
    conditional_mean_exp_tail,
    conditional_mean_steps,
    integrate_steps,
    TAIL_THRESHOLD,
)

__all__ = [
    "RiskSets",
    "risk_sets",
    "cox_partial_nll",
    "cox_fit",
    "breslow_baseline",
    "CoxModel",
    "cox_predict_survival",
]

SEPARATION_NORM = 50.0


@dataclass(frozen=True)
class RiskSets:
    """Risk-set incidence at the distinct event times.

    ``mask[i, j]`` is true when subject ``i`` is at risk at ``times[j]``;
    ``dead[i, j]`` when subject ``i`` has its event there.
    """

    times: np.ndarray
    mask: np.ndarray
    dead: np.ndarray

    @property
    def n_events(self):
        return self.dead.sum(axis=0)


def risk_sets(time, event, entry=None) -> RiskSets:
    t = np.asarray(time, dtype=float).reshape(-1)
    d = np.asarray(event, dtype=float).reshape(-1)
    e = np.zeros_like(t) if entry is None else np.broadcast_to(np.asarray(entry, float), t.shape)
    observed = (e < t) | (e == 0)
    ev_times = np.unique(t[(d == 1) & observed])
    mask = (e[:, None] < ev_times[None, :]) & (t[:, None] >= ev_times[None, :])
    mask |= (e[:, None] == 0) & (ev_times[None, :] == 0) & (t[:, None] >= 0)
    dead = (d[:, None] == 1) & (t[:, None] == ev_times[None, :]) & mask
    return RiskSets(ev_times, mask, dead)


def _unpack(data, X=None, time=None, event=None, entry=None):
    """Accept either a :class:`Dataset` or explicit arrays."""
    if isinstance(data, Dataset):
        entry = data.tau if np.any(data.tau > 0) else None
        return data.x, data.t_obs, data.delta, entry
    X = np.asarray(data if X is None else X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, np.asarray(time, float), np.asarray(event, float), entry


def _nll_parts(beta, X, rs, weights=None, hessian=False):
    eta = X @ beta
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    if weights is not None:
        w = w * weights
        dead = rs.dead * weights[:, None]
    else:
        dead = rs.dead.astype(float)
    M = rs.mask.astype(float)
    S0 = M.T @ w                                   # (K,)
    S1 = M.T @ (w[:, None] * X)                    # (K, p)
    d_j = dead.sum(axis=0)                         # (K,)
    loss = -(dead.sum(axis=1) @ eta) + d_j @ (np.log(S0) + shift)
    xbar = S1 / S0[:, None]
    grad = -(dead.sum(axis=1) @ X) + d_j @ xbar
    if not hessian:
        return loss, grad, None
    p = X.shape[1]
    XX = (X[:, :, None] * X[:, None, :]).reshape(-1, p * p)
    S2 = (M.T @ (w[:, None] * XX)).reshape(-1, p, p)
    H = np.einsum("j,jkl->kl", d_j / S0, S2) - (xbar * d_j[:, None]).T @ xbar
    return loss, grad, H


def cox_partial_nll(beta, data, time=None, event=None, entry=None):
    """Negative log partial likelihood (Breslow ties) and its gradient.

    ``-sum_i delta_i [x_i b - log sum_{j in R(t_i)} exp(x_j b)]``.

    Parameters
    ----------
    beta : array_like, shape (p,)
    data : Dataset or array_like, shape (n, p)
        With an array, ``time`` and ``event`` (and optionally ``entry``) are
        required.
    """
    X, t, d, e = _unpack(data, time=time, event=event, entry=entry)
    if d.sum() == 0:
        raise DegenerateError("partial likelihood needs at least one event")
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != X.shape[1]:
        raise ValidationError(f"beta has length {beta.shape[0]}, expected {X.shape[1]}")
    loss, grad, _ = _nll_parts(beta, X, risk_sets(t, d, e))
    return float(loss), grad


def breslow_baseline(beta, data, time=None, event=None, entry=None) -> StepCumHaz:
    """Breslow cumulative baseline hazard ``sum_{t_j <= t} d_j / sum_{R_j} exp(x b)``."""
    X, t, d, e = _unpack(data, time=time, event=event, entry=entry)
    rs = risk_sets(t, d, e)
    if rs.times.size == 0:
        return StepCumHaz([], [])
    r = np.exp(X @ np.asarray(beta, dtype=float).reshape(-1))
    inc = rs.n_events / (rs.mask.T @ r)
    return StepCumHaz(rs.times, np.cumsum(inc))


@dataclass
class CoxModel:
    """Fitted proportional-hazards model.

    ``S(t | x) = exp(-H0(t)) ** exp(x b)``; curves hold their last value up to
    ``t_max``, the largest observed time in the training data.
    """

    beta: np.ndarray
    baseline: StepCumHaz
    t_max: float
    n_iter: int = 0
    converged: bool = True
    grad_norm: float = 0.0
    separated: bool = False
    dropped: tuple = ()
    info: dict = field(default_factory=dict)
    eta_range: tuple = (-np.inf, np.inf)

    @property
    def p(self):
        return self.beta.shape[0]

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.p:
            raise ValidationError(f"expected {self.p} covariates, got {X.shape[1]}")
        return X

    def risk_score(self, X):
        return np.exp(self._check(X) @ self.beta)

    def survival_matrix(self, X):
        """Knot times and the ``(n, K)`` matrix of ``S(t_k | x_i)``."""
        r = self.risk_score(X)
        with np.errstate(over="ignore", invalid="ignore"):
            S = np.exp(-np.outer(r, self.baseline.values))
        return self.baseline.times, np.nan_to_num(S, nan=0.0)

    def predict_survival(self, x) -> StepSurvival:
        times, S = self.survival_matrix(x)
        return StepSurvival(times, S[0], t_max=self.t_max)

    def predict_mean(self, X, return_flags=False):
        """Integrated survival to ``t_max``; flags rows whose tail exceeds 0.05."""
        times, S = self.survival_matrix(X)
        means = integrate_steps(times, S, self.t_max)
        if return_flags:
            last = S[:, -1] if times.size else np.ones(S.shape[0])
            return means, last > TAIL_THRESHOLD
        return means

    @property
    def baseline_rate(self):
        """Average baseline hazard ``H0(t_K) / t_K`` over the event-time span."""
        if self.baseline.times.size == 0 or self.baseline.times[-1] <= 0:
            return 0.0
        return float(self.baseline.values[-1] / self.baseline.times[-1])

    def conditional_mean(self, X, c, tail="exponential"):
        """``E[T | T > c, x]`` under the fitted curve.

        ``tail="exponential"`` continues each curve past the last event time
        with hazard ``exp(x b) * baseline_rate``; ``"restricted"`` holds the
        last value up to ``t_max`` and stops there.
        """
        times, S = self.survival_matrix(X)
        c = np.broadcast_to(np.asarray(c, float), (S.shape[0],))
        if tail == "exponential":
            # tail hazards are only extrapolated within the training risk range
            rates = np.exp(np.clip(self._check(X) @ self.beta, *self.eta_range)) * self.baseline_rate
            return conditional_mean_exp_tail(times, S, c, rates)
        grid = np.append(times, self.t_max) if (times.size == 0 or self.t_max > times[-1]) else times
        if grid.size > times.size:
            S = np.hstack([S, S[:, -1:] if times.size else np.ones((S.shape[0], 1))])
        return conditional_mean_steps(grid, S, c)

    def to_dict(self):
        return {
            "beta": self.beta.tolist(),
            "baseline_knots": self.baseline.times.tolist(),
            "increments": self.baseline.increments.tolist(),
            "t_max": self.t_max,
            "converged": self.converged,
            "separated": self.separated,
        }


def cox_predict_survival(model: CoxModel, x) -> StepSurvival:
    return model.predict_survival(x)


def cox_fit(data, time=None, event=None, entry=None, weights=None,
            max_iter=100, tol=1e-8) -> CoxModel:
    """Maximise the partial likelihood by damped Newton iterations.

    Constant covariate columns are dropped (with a warning) and receive a zero
    coefficient. Each Newton step is halved until the loss decreases; when the
    Hessian is not positive definite a gradient step is taken instead.
    Separation is flagged when ``||b|| > 50``.

    Parameters
    ----------
    weights : array_like, optional
        Case weights (e.g. bootstrap multiplicities).
    """
    X, t, d, e = _unpack(data, time=time, event=event, entry=entry)
    n, p = X.shape
    if d.sum() == 0:
        raise DegenerateError("Cox fit needs at least one event")
    w = None if weights is None else np.asarray(weights, dtype=float)
    const = np.flatnonzero(np.ptp(X, axis=0) == 0) if n else np.arange(p)
    if const.size:
        warnings.warn(f"dropping constant covariate columns {const.tolist()}", stacklevel=2)
    keep = np.setdiff1d(np.arange(p), const)
    Xk = X[:, keep]
    rs = risk_sets(t, d, e)

    beta = np.zeros(keep.size)
    loss, grad, H = _nll_parts(beta, Xk, rs, w, hessian=True)
    it = 0
    converged = np.linalg.norm(grad) < tol if keep.size else True
    while not converged and it < max_iter:
        it += 1
        try:
            step = -linalg.solve(H, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = -grad
        if not np.all(np.isfinite(step)):
            step = -grad
        lam = 1.0
        for _ in range(60):
            cand = beta + lam * step
            new_loss, new_grad, new_H = _nll_parts(cand, Xk, rs, w, hessian=True)
            if np.isfinite(new_loss) and new_loss <= loss + 1e-12 * abs(loss):
                break
            lam *= 0.5
        else:
            break
        beta, loss, grad, H = cand, new_loss, new_grad, new_H
        converged = np.linalg.norm(grad) < tol or (lam * np.linalg.norm(step) < 1e-14)
        if np.linalg.norm(beta) > 2 * SEPARATION_NORM:
            break

    full = np.zeros(p)
    full[keep] = beta
    gnorm = float(np.linalg.norm(grad)) if keep.size else 0.0
    separated = bool(np.linalg.norm(full) > SEPARATION_NORM)
    if separated:
        warnings.warn(f"monotone likelihood: ||beta|| = {np.linalg.norm(full):.3g}", stacklevel=2)
    elif not converged:
        warnings.warn(f"Cox fit did not converge after {it} iterations "
                      f"(gradient norm {gnorm:.3g})", stacklevel=2)
    observed = (np.zeros_like(t) if e is None else e) < t
    t_max = float(t[observed].max()) if observed.any() else float(t.max())
    base = _breslow_weighted(full, X, rs, w)
    eta = X @ full
    return CoxModel(beta=full, baseline=base, t_max=t_max, n_iter=it,
                    converged=bool(converged), grad_norm=gnorm, separated=separated,
                    dropped=tuple(const.tolist()), info={"loss": float(loss)},
                    eta_range=(float(eta.min()), float(eta.max())))


def _breslow_weighted(beta, X, rs, weights=None):
    if rs.times.size == 0:
        return StepCumHaz([], [])
    r = np.exp(X @ beta)
    if weights is None:
        num, den = rs.n_events, rs.mask.T @ r
    else:
        num, den = (rs.dead * weights[:, None]).sum(axis=0), rs.mask.T @ (r * weights)
    return StepCumHaz(rs.times, np.cumsum(num / den))
