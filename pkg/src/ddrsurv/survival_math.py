"""Survival curves, cumulative hazards and the integrals derived from them.

Step functions are right-continuous with left limits: a curve with knots
``t_1 < ... < t_m`` and values ``s_1 >= ... >= s_m`` equals ``initial`` on
``[0, t_1)`` and ``s_j`` on ``[t_j, t_{j+1})``. Integrals over steps are
computed exactly.
"""

from __future__ import annotations

import csv
import math
from typing import NamedTuple

import numpy as np
from scipy import integrate

from .exceptions import ParameterError, ValidationError

__all__ = [
    "StepSurvival",
    "StepCumHaz",
    "ParametricSurvival",
    "ParametricCumHaz",
    "MeanSurvival",
    "survival_from_cumhaz",
    "hazard_from_survival",
    "mean_survival",
    "rmst",
    "integrate_steps",
    "conditional_mean_steps",
    "conditional_mean_exp_tail",
    "write_curve_csv",
]

TAIL_THRESHOLD = 0.05


def _check_knots(times, values):
    times = np.asarray(times, dtype=float).reshape(-1)
    values = np.asarray(values, dtype=float).reshape(-1)
    if times.shape != values.shape:
        raise ValidationError("knot times and values differ in length")
    if times.size and (np.any(np.diff(times) <= 0) or times[0] < 0):
        raise ValidationError("knot times must be nonnegative and strictly increasing")
    return times, values


class StepSurvival:
    """Right-continuous nonincreasing step survival function.

    Parameters
    ----------
    times : array_like
        Strictly increasing knot times.
    values : array_like
        Survival probability from each knot (inclusive) to the next.
    initial : float, default 1.0
        Value on ``[0, times[0])``; below one only under left truncation or
        for the anchored-probability convention.
    t_max : float, optional
        Evaluation horizon; defaults to the last knot.
    """

    def __init__(self, times, values, initial=1.0, t_max=None):
        times, values = _check_knots(times, values)
        if np.any(values < -1e-12) or np.any(values > 1 + 1e-12) or not 0 <= initial <= 1:
            raise ValidationError("survival values must lie in [0, 1]")
        if np.any(np.diff(np.concatenate([[initial], values])) > 1e-12):
            raise ValidationError("survival curve must be nonincreasing")
        self.times = times
        self.values = np.clip(values, 0.0, 1.0)
        self.initial = float(initial)
        last = times[-1] if times.size else 0.0
        self.t_max = float(last if t_max is None else max(t_max, last))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate([[self.initial], self.values])
        out = padded[idx + 1]
        return out if out.ndim else float(out)

    def left_limit(self, t):
        """``S(t-)``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left") - 1
        padded = np.concatenate([[self.initial], self.values])
        out = padded[idx + 1]
        return out if out.ndim else float(out)

    def integral(self, upper):
        """Exact integral of the step function over ``[0, upper]``."""
        return float(integrate_steps(self.times, self.values[None, :], upper, self.initial)[0])

    def mean(self):
        return mean_survival(self).value

    def __repr__(self):
        return f"StepSurvival(knots={self.times.size}, t_max={self.t_max:.4g})"


class StepCumHaz:
    """Right-continuous nondecreasing step cumulative hazard with ``H(0) = 0``."""

    def __init__(self, times, values):
        times, values = _check_knots(times, values)
        if np.any(values < 0):
            raise ValidationError("cumulative hazard must be nonnegative")
        if np.any(np.diff(values) < -1e-12):
            raise ValidationError("cumulative hazard must be nondecreasing")
        self.times = times
        self.values = values

    @property
    def increments(self):
        return np.diff(np.concatenate([[0.0], self.values]))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate([[0.0], self.values])
        out = padded[idx + 1]
        return out if out.ndim else float(out)

    def __repr__(self):
        return f"StepCumHaz(knots={self.times.size})"


class ParametricSurvival:
    """Survival curve of a parametric family (see :mod:`ddrsurv.parametric`).

    The family must provide ``survival(t)``, ``mean()``, ``quantile(p)`` and
    ``tail_integral(t)`` (the integral of ``S`` over ``[t, inf)``).
    """

    def __init__(self, family, t_max=None):
        self.family = family
        self.t_max = float(family.quantile(0.999) if t_max is None else t_max)

    def __call__(self, t):
        return self.family.survival(t)

    def __repr__(self):
        return f"ParametricSurvival({self.family!r})"

    def mean(self):
        return mean_survival(self).value


class ParametricCumHaz:
    def __init__(self, family):
        self.family = family

    def __call__(self, t):
        with np.errstate(divide="ignore"):
            return -np.log(self.family.survival(t))


class MeanSurvival(NamedTuple):
    """Integrated survival together with a flag for an unresolved tail."""

    value: float
    truncated: bool


def survival_from_cumhaz(h):
    """``S(t) = exp(-H(t))``."""
    if isinstance(h, StepCumHaz):
        if np.any(h.values < 0):
            raise ParameterError("negative cumulative hazard")
        with np.errstate(over="ignore"):
            return StepSurvival(h.times, np.exp(-h.values))
    if isinstance(h, ParametricCumHaz):
        return ParametricSurvival(h.family)
    raise TypeError(f"unsupported cumulative hazard {type(h).__name__}")


def hazard_from_survival(s):
    """``H(t) = -log S(t)``; knots where ``S = 0`` carry ``+inf``."""
    if isinstance(s, StepSurvival):
        with np.errstate(divide="ignore"):
            values = -np.log(s.values)
        if s.initial != 1.0:
            raise ValidationError("cumulative hazard requires S(0) = 1")
        return StepCumHaz(s.times, np.maximum(values, 0.0))
    if isinstance(s, ParametricSurvival):
        return ParametricCumHaz(s.family)
    raise TypeError(f"unsupported survival curve {type(s).__name__}")


def integrate_steps(times, S, upper=None, initial=1.0):
    """Row-wise exact integral of step curves over ``[0, upper]``.

    ``S`` has shape ``(n, m)``: row ``i`` holds curve ``i`` at the shared knots.
    ``upper`` defaults to the last knot; beyond it the last value is held.
    """
    times = np.asarray(times, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = S.shape[0]
    if times.size == 0:
        up = 0.0 if upper is None else float(upper)
        return np.full(n, initial * up)
    upper = times[-1] if upper is None else float(upper)
    edges = np.concatenate([[0.0], times])
    left_vals = np.concatenate([np.full((n, 1), initial), S], axis=1)
    widths = np.clip(np.minimum(np.append(times, np.inf), upper) - edges, 0.0, None)
    return left_vals @ widths


def conditional_mean_steps(times, S, c):
    """``E[T | T > c_i]`` for each row of step curves, truncated at the last knot.

    Returns ``c_i + int_{c_i}^{t_m} S_i / S_i(c_i)``; rows with ``S_i(c_i) = 0``
    (or ``c_i`` beyond the last knot) return ``c_i``.
    """
    times = np.asarray(times, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    c = np.asarray(c, dtype=float).reshape(-1)
    n = S.shape[0]
    if times.size == 0:
        return c.copy()
    padded = np.concatenate([np.ones((n, 1)), S], axis=1)
    edges = np.concatenate([[0.0], times])
    widths = np.diff(edges)
    # cum[:, k] = integral over [0, edges[k]]
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(padded[:, :-1] * widths, axis=1)], axis=1)
    k = np.clip(np.searchsorted(times, c, side="right"), 0, times.size)
    rows = np.arange(n)
    s_c = padded[rows, k]
    c_clip = np.minimum(c, times[-1])
    int_to_c = cum[rows, k] + s_c * (c_clip - edges[k])
    remaining = cum[:, -1] - int_to_c
    out = c.copy()
    ok = s_c > 0
    out[ok] = c[ok] + np.maximum(remaining[ok], 0.0) / s_c[ok]
    return out


def conditional_mean_exp_tail(times, S, c, rates):
    """``E[T | T > c_i]`` for step curves continued by an exponential tail.

    Beyond the last knot ``t_m`` row ``i`` decays as
    ``S_i(t_m) exp(-rates_i (t - t_m))``. Rows with ``S_i(c_i) = 0`` return
    ``c_i``.
    """
    times = np.asarray(times, dtype=float)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    c = np.asarray(c, dtype=float).reshape(-1)
    rates = np.broadcast_to(np.asarray(rates, dtype=float), c.shape)
    if times.size == 0:
        with np.errstate(divide="ignore"):
            return c + np.where(rates > 0, 1.0 / rates, np.inf)
    n = S.shape[0]
    rows = np.arange(n)
    t_m = times[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        tail_area = np.where(rates > 0, S[:, -1] / rates, np.where(S[:, -1] > 0, np.inf, 0.0))
        # body: exact step integral over [c, t_m] when c < t_m
        body = conditional_mean_steps(times, S, np.minimum(c, t_m)) - np.minimum(c, t_m)
        padded = np.concatenate([np.ones((n, 1)), S], axis=1)
        s_c = padded[rows, np.searchsorted(times, np.minimum(c, t_m), side="right")]
        inside = c < t_m
        out = np.where(inside, c + body + np.where(s_c > 0, tail_area / s_c, 0.0),
                       c + np.where(rates > 0, 1.0 / rates, np.inf))
    return np.where((s_c > 0) | ~inside, out, c)


def mean_survival(s, tail_threshold=TAIL_THRESHOLD) -> MeanSurvival:
    """Mean survival time ``int_0^inf S(t) dt``.

    Step curves are integrated exactly up to their horizon; if the curve has not
    dropped to ``tail_threshold`` there the result is a restricted mean and the
    ``truncated`` flag is set. Parametric curves use adaptive quadrature up to
    the horizon plus the family's analytic tail.
    """
    if isinstance(s, StepSurvival):
        value = s.integral(s.t_max)
        return MeanSurvival(value, bool(s(s.t_max) > tail_threshold))
    if isinstance(s, ParametricSurvival):
        body, _ = integrate.quad(lambda t: s.family.survival(t), 0.0, s.t_max,
                                 limit=200, epsabs=1e-11, epsrel=1e-11)
        return MeanSurvival(float(body + s.family.tail_integral(s.t_max)), False)
    raise TypeError(f"unsupported survival curve {type(s).__name__}")


def rmst(s, horizon) -> float:
    """Restricted mean survival time ``int_0^horizon S(t) dt``."""
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if horizon == 0:
        return 0.0
    if isinstance(s, StepSurvival):
        return s.integral(horizon)
    if isinstance(s, ParametricSurvival):
        if math.isinf(horizon):
            return mean_survival(s).value
        val, _ = integrate.quad(lambda t: s.family.survival(t), 0.0, horizon,
                                limit=200, epsabs=1e-11, epsrel=1e-11)
        return float(val)
    raise TypeError(f"unsupported survival curve {type(s).__name__}")


def write_curve_csv(s, path, grid=None):
    """Two-column ``time,survival`` CSV; step curves default to their knots."""
    if grid is None:
        if isinstance(s, StepSurvival):
            grid = np.concatenate([[0.0], s.times])
        else:
            grid = np.linspace(0.0, s.t_max, 201)
    grid = np.asarray(grid, dtype=float)
    vals = np.asarray(s(grid), dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "survival"])
        for t, v in zip(grid, vals):
            w.writerow([f"{t:.12g}", f"{v:.12g}"])
    return path
