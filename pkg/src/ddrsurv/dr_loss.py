"""Censoring-robust empirical losses.

Given per-record complete-case losses ``L_i``, a censoring model ``G`` and a
conditional-loss model ``U(x, t) = E[L | T >= t, x]``:

* IPW: ``mean(d_i L_i / G_i)``
* augmented (form A): ``mean(d_i L_i / G_i + (1 - d_i / G_i) U_i)``
* martingale (form B): ``mean(d_i L_i / G_i + sum_k U_ik dM_ik / G_ik)``

where ``G_i = G(t_obs_i | r_i)``. Under truncation ``d`` is the complete-case
indicator ``delta_tau``; otherwise it is ``delta``. The three truncated forms
are the augmented one (1), the martingale one (2) and the martingale expanded
into its jump and compensator parts (3).

By default ``U`` is frozen at each record's observed time, ``U_ik = U(x_i,
t_obs_i)``, under which all forms coincide exactly. With ``pathwise=True``
the martingale forms evaluate ``U(x_i, t_k)`` along the grid instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .censoring import CensoringModel, martingale_matrix
from .data import Dataset
from .exceptions import DegenerateError, ValidationError

__all__ = [
    "ConditionalLossModel",
    "fit_conditional_loss",
    "ipcw_weights",
    "ipw_loss",
    "dr_loss_censoring",
    "dr_loss_ltrc",
    "dr_terms",
]


@dataclass
class ConditionalLossModel:
    """At-risk linear regression of the loss on covariates.

    ``coef[k]`` is the (weighted least squares) fit on ``{j : t_obs_j >= knots[k]}``.
    Sets with fewer than ``2 (p + 1)`` records use the weighted at-risk mean.
    Predictions are clipped to the range of losses in the at-risk set. Queries
    past the last knot reuse the last nonempty set.
    """

    knots: np.ndarray
    coef: np.ndarray        # (m, p + 1) on standardised covariates
    lo: np.ndarray
    hi: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    covariates: bool = True

    def _index(self, t):
        k = np.searchsorted(self.knots, np.asarray(t, dtype=float), side="left")
        return np.minimum(k, self.knots.size - 1)

    def _design(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xs = (X - self.center) / self.scale if self.covariates else X[:, :0]
        return np.hstack([np.ones((X.shape[0], 1)), Xs])

    def predict(self, X, t):
        """``U(x_i, t_i)`` for paired rows and times."""
        D = self._design(X)
        k = self._index(np.broadcast_to(np.asarray(t, dtype=float), (D.shape[0],)))
        out = np.einsum("ij,ij->i", D, self.coef[k])
        return np.clip(out, self.lo[k], self.hi[k])

    def matrix(self, X, grid):
        """``U(x_i, grid_k)`` as an ``(n, K)`` array."""
        D = self._design(X)
        k = self._index(grid)
        out = D @ self.coef[k].T
        return np.clip(out, self.lo[k][None, :], self.hi[k][None, :])

    def __call__(self, X, t):
        return self.predict(X, t)


def fit_conditional_loss(losses, dataset: Dataset, weights=None, covariates=True,
                         ridge=1e-8) -> ConditionalLossModel:
    """Estimate ``U(x, t) = E[L | t_obs >= t, x]``.

    Parameters
    ----------
    losses : array_like, shape (n,)
    dataset : Dataset
        Supplies ``x`` and ``t_obs``.
    weights : array_like, optional
        Case weights; pass IPCW weights to target the full-data loss when
        ``losses`` are only meaningful for complete cases.
    covariates : bool
        ``False`` gives the covariate-free at-risk mean.
    """
    y = np.asarray(losses, dtype=float).reshape(-1)
    if y.shape[0] != dataset.n:
        raise ValidationError("one loss per record required")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    X = dataset.x
    t = dataset.t_obs
    center = X.mean(axis=0) if X.size else np.zeros(X.shape[1])
    scale = X.std(axis=0) if X.size else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    p1 = X.shape[1] + 1 if covariates else 1
    D = np.hstack([np.ones((dataset.n, 1)), (X - center) / scale if covariates else X[:, :0]])

    order = np.argsort(-t, kind="stable")          # longest first
    knots = np.unique(t)
    Dw = D[order] * w[order, None]
    # reverse cumulative sufficient statistics over the at-risk sets
    cum_xx = np.cumsum(Dw[:, :, None] * D[order][:, None, :], axis=0)
    cum_xy = np.cumsum(Dw * y[order, None], axis=0)
    cum_w = np.cumsum(w[order])
    has = (w[order] > 0)
    lo_run = np.minimum.accumulate(np.where(has, y[order], np.inf))
    hi_run = np.maximum.accumulate(np.where(has, y[order], -np.inf))
    # at-risk set at knot u is the prefix of records with t >= u
    last = dataset.n - np.searchsorted(np.sort(t), knots, side="left") - 1

    m = knots.size
    coef = np.zeros((m, p1))
    XtX = cum_xx[last]
    Xty = cum_xy[last]
    wsum = cum_w[last]
    n_pos = np.cumsum(has)[last]
    mean = np.where(wsum > 0, Xty[:, 0] / np.where(wsum > 0, wsum, 1.0), 0.0)
    coef[:, 0] = mean
    use_reg = (n_pos >= 2 * p1) & (p1 > 1)
    if use_reg.any():
        A = XtX[use_reg] + ridge * np.eye(p1) * np.maximum(wsum[use_reg], 1.0)[:, None, None]
        coef[use_reg] = np.linalg.solve(A, Xty[use_reg][..., None])[..., 0]
    lo, hi = lo_run[last], hi_run[last]
    # sets shrink with the knot, so empty ones form a suffix; reuse the last populated one
    empty = ~np.isfinite(lo)
    if empty.all():
        raise DegenerateError("no record carries positive weight")
    if empty.any():
        src = np.flatnonzero(~empty)[-1]
        coef[empty], lo[empty], hi[empty] = coef[src], lo[src], hi[src]
    return ConditionalLossModel(knots, coef, lo, hi, center, scale, covariates)


# -- loss functionals ----------------------------------------------------------

def _indicator(dataset: Dataset, use_tau: bool):
    return dataset.delta_tau if use_tau else dataset.delta


def ipcw_weights(dataset: Dataset, g: CensoringModel, use_tau=True):
    """``d_i / G(t_obs_i | r_i)`` with ``G`` floored."""
    d = _indicator(dataset, use_tau)
    G = g.survival(dataset.t_obs, dataset.r)
    return d / G


def ipw_loss(losses, dataset: Dataset, g: CensoringModel, use_tau=False) -> float:
    """Inverse-probability-of-censoring weighted complete-case loss."""
    L = np.asarray(losses, dtype=float).reshape(-1)
    w = ipcw_weights(dataset, g, use_tau)
    if not np.any(w > 0):
        raise DegenerateError("all IPCW weights are zero")
    return float(np.sum(w * np.where(w > 0, L, 0.0)) / dataset.n)


def _frozen_u(u, dataset: Dataset):
    if isinstance(u, ConditionalLossModel) or callable(u):
        vals = np.asarray(u(dataset.x, dataset.t_obs), dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(u, dtype=float), (dataset.n,))
    vals = np.broadcast_to(vals, (dataset.n,)).astype(float)
    if not np.all(np.isfinite(vals)):
        raise ValidationError("conditional loss is undefined for some records")
    return vals


def _path_u(u, dataset: Dataset, grid):
    if isinstance(u, ConditionalLossModel):
        return u.matrix(dataset.x, grid)
    if callable(u):
        tt = np.broadcast_to(grid, (dataset.n, grid.size))
        rows = np.repeat(np.arange(dataset.n), grid.size)
        return np.asarray(u(dataset.x[rows], tt.reshape(-1)), dtype=float).reshape(dataset.n, -1)
    return np.broadcast_to(np.asarray(u, dtype=float), (dataset.n, grid.size))


def dr_terms(losses, dataset: Dataset, g: CensoringModel, u, form="A",
             use_tau=True, pathwise=False):
    """Per-record contributions whose mean is the doubly robust loss.

    ``form`` is one of ``"A"``/``1`` (augmented), ``"B"``/``2`` (martingale)
    or ``3`` (jump minus compensator).
    """
    form = {"A": 1, "B": 2, 1: 1, 2: 2, 3: 3, "1": 1, "2": 2, "3": 3}.get(form)
    if form is None:
        raise ValidationError("form must be one of A, B, 1, 2, 3")
    L = np.asarray(losses, dtype=float).reshape(-1)
    if L.shape[0] != dataset.n:
        raise ValidationError("one loss per record required")
    d = _indicator(dataset, use_tau)
    G_obs = g.survival(dataset.t_obs, dataset.r)
    if not np.any(d > 0):
        raise DegenerateError("no complete cases")
    ipw = np.where(d > 0, d * L / G_obs, 0.0)

    if form == 1:
        return ipw + (1.0 - d / G_obs) * _frozen_u(u, dataset)

    grid, dM, G = martingale_matrix(g, dataset.t_obs, d, dataset.r)
    if pathwise:
        U = _path_u(u, dataset, grid)
    else:
        U = _frozen_u(u, dataset)[:, None]
    if form == 2:
        return ipw + np.sum(U * dM / G, axis=1)
    prev = np.hstack([np.ones((dataset.n, 1)), G[:, :-1]])
    dH = 1.0 - G / prev
    at_risk = dataset.t_obs[:, None] >= grid[None, :]
    jump_col = np.searchsorted(grid, dataset.t_obs)
    U_jump = U[np.arange(dataset.n), np.minimum(jump_col, U.shape[1] - 1)]
    jump = (1.0 - d) * U_jump / G_obs
    compensator = np.sum(np.where(at_risk, U * dH / G, 0.0), axis=1)
    return ipw + jump - compensator


def dr_loss_censoring(losses, dataset: Dataset, g: CensoringModel, u, form="A",
                      pathwise=False) -> float:
    """Augmented IPCW loss using the event indicator ``delta``."""
    if form not in ("A", "B"):
        raise ValidationError("form must be 'A' or 'B'")
    return float(np.mean(dr_terms(losses, dataset, g, u, form, use_tau=False, pathwise=pathwise)))


def dr_loss_ltrc(losses, dataset: Dataset, g: CensoringModel, u, form=1,
                 pathwise=False) -> float:
    """Augmented IPCW loss using the complete-case indicator ``delta_tau``."""
    if form not in (1, 2, 3):
        raise ValidationError("form must be 1, 2 or 3")
    return float(np.mean(dr_terms(losses, dataset, g, u, form, use_tau=True, pathwise=pathwise)))
