"""Product-limit survival estimation with delayed entry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .exceptions import ValidationError
from .survival_math import ParametricSurvival, StepSurvival

__all__ = ["RiskTable", "KMCurve", "risk_table", "km_fit", "km_median"]


@dataclass(frozen=True)
class RiskTable:
    """Counts at the distinct event times.

    ``n_at_risk[j]`` counts subjects with ``entry < t_j <= t_obs``; subjects
    censored at ``t_j`` are still at risk there (events precede censorings).
    ``censored[j]`` counts censorings in ``[t_j, t_{j+1})``.
    """

    times: np.ndarray
    n_at_risk: np.ndarray
    events: np.ndarray
    censored: np.ndarray


def _prepare(times, events, entry_times):
    t = np.asarray(times, dtype=float).reshape(-1)
    d = np.asarray(events, dtype=float).reshape(-1)
    if t.size == 0:
        raise ValueError("empty input")
    if d.shape != t.shape:
        raise ValueError("times and events differ in length")
    if np.any(t < 0):
        raise ValidationError("times must be nonnegative")
    if not np.all((d == 0) | (d == 1)):
        raise ValidationError("events must be 0/1")
    if entry_times is None:
        e = np.zeros_like(t)
    else:
        e = np.broadcast_to(np.asarray(entry_times, dtype=float), t.shape)
    # subjects leaving before (or at) entry are never under observation
    keep = (e < t) | ((e == 0) & (t == 0))
    return t[keep], d[keep], e[keep]


def risk_table(times, events, entry_times=None) -> RiskTable:
    t, d, e = _prepare(times, events, entry_times)
    ev_times = np.unique(t[d == 1])
    t_sorted = np.sort(t)
    e_sorted = np.sort(e)
    # n_j = #{t_obs >= t_j} - #{entry >= t_j}; valid because entry < t_obs
    n_at_risk = (t.size - np.searchsorted(t_sorted, ev_times, side="left")
                 - (e.size - np.searchsorted(e_sorted, ev_times, side="left")))
    ev_sorted = np.sort(t[d == 1])
    n_events = (np.searchsorted(ev_sorted, ev_times, side="right")
                - np.searchsorted(ev_sorted, ev_times, side="left"))
    cens_sorted = np.sort(t[d == 0])
    upper = np.append(ev_times[1:], np.inf)
    censored = (np.searchsorted(cens_sorted, upper, side="left")
                - np.searchsorted(cens_sorted, ev_times, side="left"))
    return RiskTable(ev_times, n_at_risk.astype(int), n_events.astype(int), censored.astype(int))


class KMCurve(StepSurvival):
    """Kaplan-Meier step curve carrying its risk table."""

    def __init__(self, table: RiskTable, t_max=None, all_censored=False):
        with np.errstate(divide="ignore", invalid="ignore"):
            factors = 1.0 - table.events / table.n_at_risk
        values = np.cumprod(factors) if factors.size else factors
        super().__init__(table.times, values, t_max=t_max)
        self.risk_table = table
        self.all_censored = all_censored


def km_fit(times, events, entry_times=None) -> KMCurve:
    """Kaplan-Meier estimate ``S(t) = prod_{t_j <= t} (1 - d_j / n_j)``.

    With ``entry_times`` each subject joins the risk set after its entry
    (left-truncation adjustment). An all-censored sample yields a curve flat
    at one with ``all_censored`` set.
    """
    t, d, e = _prepare(times, events, entry_times)
    table = risk_table(t, d, e)
    t_max = float(t.max()) if t.size else 0.0
    return KMCurve(table, t_max=t_max, all_censored=bool(d.sum() == 0))


def km_median(curve):
    """Smallest time with ``S(t) <= 1/2``; ``None`` if the curve never gets there."""
    if isinstance(curve, StepSurvival):
        if curve.initial <= 0.5:
            return 0.0
        hit = np.flatnonzero(curve.values <= 0.5)
        return float(curve.times[hit[0]]) if hit.size else None
    if isinstance(curve, ParametricSurvival):
        hi = 1.0
        while float(curve(hi)) > 0.5:
            hi *= 2.0
            if hi > 1e12:
                return None
        return float(optimize.brentq(lambda t: float(curve(t)) - 0.5, 0.0, hi, xtol=1e-12))
    raise TypeError(f"unsupported curve {type(curve).__name__}")
