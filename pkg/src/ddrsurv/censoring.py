"""Censoring survival ``G(t | r) = P(C > t | r)`` and censoring martingales.

``G`` is fitted by swapping the roles of events and censorings. Wherever it
is used as a divisor it is floored at :data:`G_FLOOR`. Martingale increments
use the discrete hazard ``dH_k = 1 - G(t_k) / G(t_{k-1})`` of the floored
curve, which makes ``sum_k dM_k / G_k = 1 - delta / G(t_obs)`` exact.
"""

from __future__ import annotations

import warnings
from typing import Callable

import numpy as np

from .cox import CoxModel, cox_fit
from .data import Dataset, SubjectRecord
from .exceptions import ValidationError
from .kaplan_meier import km_fit

__all__ = [
    "G_FLOOR",
    "CensoringModel",
    "fit_censoring",
    "martingale_increments",
    "martingale_matrix",
]

G_FLOOR = 0.05
METHODS = ("km", "cox", "none")


class CensoringModel:
    """Fitted censoring distribution.

    Parameters
    ----------
    method : {"km", "cox", "none", "callable"}
    fitted : KMCurve, CoxModel, callable or None
        For ``"callable"``, ``fitted(t, R)`` must return ``G`` with ``t`` of
        shape ``(n, K)`` and ``R`` of shape ``(n, s)``.
    floor : float
    """

    def __init__(self, method, fitted=None, floor=G_FLOOR, knots=None):
        self.method = method
        self.fitted = fitted
        self.floor = float(floor)
        if knots is None:
            if method == "km":
                knots = fitted.times
            elif method == "cox":
                knots = fitted.baseline.times
            else:
                knots = np.empty(0)
        self.knots = np.asarray(knots, dtype=float)
        self.last_floored = 0

    @classmethod
    def constant(cls):
        """``G = 1``: no censoring adjustment."""
        return cls("none")

    @classmethod
    def from_callable(cls, fn: Callable, floor=G_FLOOR):
        return cls("callable", fn, floor=floor)

    def _raw(self, t, R):
        """Unfloored ``G`` at ``t`` (shape ``(n, K)``) for rows of ``R``."""
        t = np.asarray(t, dtype=float)
        if self.method == "none":
            return np.ones_like(t)
        if self.method == "km":
            return np.asarray(self.fitted(t), dtype=float)
        if self.method == "cox":
            r = self.fitted.risk_score(R)
            H = self.fitted.baseline(t)
            return np.exp(-H * r[:, None])
        return np.asarray(self.fitted(t, R), dtype=float)

    def survival(self, t, R=None, floor=True):
        """``G(t_i | r_i)`` for each record; ``t`` has one entry per row of ``R``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if R is not None:
            R = np.atleast_2d(np.asarray(R, dtype=float))
        G = self._raw(t[:, None], R)[:, 0]
        if floor:
            self.last_floored = int(np.sum(G < self.floor))
            G = np.maximum(G, self.floor)
        return G

    def matrix(self, grid, R=None, n=None, floor=True):
        """``G(grid_k | r_i)`` as an ``(n, K)`` array."""
        grid = np.asarray(grid, dtype=float)
        if R is not None:
            R = np.atleast_2d(np.asarray(R, dtype=float))
            n = R.shape[0]
        n = 1 if n is None else n
        G = self._raw(np.broadcast_to(grid, (n, grid.size)), R)
        return np.maximum(G, self.floor) if floor else G

    def cumhaz(self, t, R=None):
        with np.errstate(divide="ignore"):
            return -np.log(self.survival(t, R, floor=False))

    def grid_for(self, t_obs):
        """Union of the model knots and the observed times."""
        return np.union1d(self.knots, np.asarray(t_obs, dtype=float))

    def __repr__(self):
        return f"CensoringModel(method={self.method!r}, knots={self.knots.size})"


def fit_censoring(dataset: Dataset, method="cox", floor=G_FLOOR) -> CensoringModel:
    """Fit ``G`` treating censoring as the event of interest.

    ``"cox"`` regresses on the censoring covariates ``r``; ``"km"`` ignores
    covariates. Delayed entry at ``tau`` is honoured. With no censored records
    the result is ``G = 1`` and a warning is issued.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown censoring method {method!r}; expected one of {METHODS}")
    if method == "none":
        return CensoringModel.constant()
    flipped = 1.0 - dataset.delta
    if flipped.sum() == 0:
        warnings.warn("no censored records; using G = 1", stacklevel=2)
        return CensoringModel("none", floor=floor)
    entry = dataset.tau if np.any(dataset.tau > 0) else None
    if method == "km":
        return CensoringModel("km", km_fit(dataset.t_obs, flipped, entry), floor=floor)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model: CoxModel = cox_fit(dataset.r, dataset.t_obs, flipped, entry=entry)
    return CensoringModel("cox", model, floor=floor)


def _increments(G, t_obs, delta, grid):
    """Rowwise ``dM`` on ``grid`` given floored ``G`` of shape ``(n, K)``."""
    prev = np.hstack([np.ones((G.shape[0], 1)), G[:, :-1]])
    dH = 1.0 - G / prev
    at_risk = t_obs[:, None] >= grid[None, :]
    dN = ((delta[:, None] == 0) & (t_obs[:, None] == grid[None, :])).astype(float)
    return dN - at_risk * dH


def martingale_matrix(model: CensoringModel, t_obs, delta, R=None, grid=None):
    """Increments ``dM_G(t_k | r_i)`` for all records on a shared grid.

    Returns ``(grid, dM, G)`` where ``G`` is the floored curve on the grid.
    ``delta`` is the indicator whose zero marks a censoring jump (``delta_tau``
    under truncation).
    """
    t_obs = np.asarray(t_obs, dtype=float).reshape(-1)
    delta = np.asarray(delta, dtype=float).reshape(-1)
    grid = model.grid_for(t_obs) if grid is None else np.asarray(grid, dtype=float)
    missing = ~np.isin(t_obs, grid)
    if missing.any():
        raise ValidationError(f"grid does not contain observed time {t_obs[missing][0]}")
    G = model.matrix(grid, R, n=t_obs.size)
    return grid, _increments(G, t_obs, delta, grid), G


def martingale_increments(model: CensoringModel, record: SubjectRecord, grid=None, use_tau=True):
    """``dM_G`` for one record on ``grid`` (which must contain ``record.t_obs``)."""
    delta = record.delta_tau if use_tau else record.delta
    grid = model.grid_for([record.t_obs]) if grid is None else np.asarray(grid, dtype=float)
    _, dM, _ = martingale_matrix(model, [record.t_obs], [delta], record.r[None, :], grid)
    return dM[0]
