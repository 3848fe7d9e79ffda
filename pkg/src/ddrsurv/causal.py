"""Propensity scores, AIPW effects, cross-fitted DR-learner and bootstrap.

Outcome models are supplied by a *fitter*: a callable taking a
:class:`~ddrsurv.data.Dataset` (whose ``x`` holds the model features) and a
seed, returning an object with ``predict_mean(F)`` and
``conditional_mean(F, c)``.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, special

from .data import Dataset, split_indices
from .exceptions import BootstrapError, DDRSurvError, DegenerateError, ValidationError

__all__ = [
    "PI_CLIP",
    "PropensityModel",
    "fit_propensity",
    "decile_grid",
    "outcome_features",
    "impute_outcome",
    "aipw_ate",
    "pseudo_outcome",
    "naive_plugin_effect",
    "dr_cate_crossfit",
    "hte_by_decile",
    "BootstrapResult",
    "bootstrap",
    "bootstrap_sd",
    "EffectReport",
]

PI_CLIP = (0.01, 0.99)
DECILE_LEVELS = np.arange(0.05, 1.0, 0.1)


# -- propensity ----------------------------------------------------------------

@dataclass
class PropensityModel:
    """Logistic model ``pi(z) = expit(c0 + z c)`` clipped to ``clip``."""

    coef: np.ndarray
    clip: tuple = PI_CLIP
    converged: bool = True
    se: np.ndarray | None = None

    def predict(self, Z, clip=True):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.coef.size - 1:
            raise ValidationError(f"expected {self.coef.size - 1} propensity covariates, got {Z.shape[1]}")
        p = special.expit(self.coef[0] + Z @ self.coef[1:])
        return np.clip(p, *self.clip) if clip else p

    __call__ = predict


def fit_propensity(data, a=None, max_iter=100, tol=1e-10) -> PropensityModel:
    """Logistic regression of treatment on ``z`` by Newton-Raphson.

    Accepts a :class:`Dataset` or ``(Z, a)``. Separation (coefficients
    diverging) stops the iteration with a warning; predictions are clipped.
    """
    if isinstance(data, Dataset):
        Z, a = data.z, data.a
    else:
        Z = np.atleast_2d(np.asarray(data, dtype=float))
        a = np.asarray(a, dtype=float)
    if a.min() == a.max():
        raise DegenerateError("propensity model needs both treatment classes")
    D = np.hstack([np.ones((Z.shape[0], 1)), Z])
    beta = np.zeros(D.shape[1])
    converged = False

    def nll(b):
        eta = D @ b
        return float(np.sum(np.logaddexp(0.0, eta) - a * eta))

    cur = nll(beta)
    for _ in range(max_iter):
        p = special.expit(D @ beta)
        grad = D.T @ (p - a)
        H = (D * (p * (1 - p))[:, None]).T @ D
        try:
            step = linalg.solve(H + 1e-12 * np.eye(H.shape[0]), grad, assume_a="pos")
        except linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-10:
            cand = beta - lam * step
            new = nll(cand)
            if new <= cur:
                break
            lam *= 0.5
        beta, done = cand, abs(cur - new) < tol * (1 + abs(cur))
        cur = new
        if np.linalg.norm(beta) > 50:
            warnings.warn("propensity model appears separated; predictions are clipped", stacklevel=2)
            break
        if done or np.linalg.norm(grad) < 1e-9:
            converged = True
            break
    p = special.expit(D @ beta)
    H = (D * (p * (1 - p))[:, None]).T @ D
    try:
        se = np.sqrt(np.diag(linalg.inv(H)))
    except linalg.LinAlgError:
        se = None
    model = PropensityModel(beta, PI_CLIP, converged, se)
    raw = model.predict(Z, clip=False)
    if np.any((raw < PI_CLIP[0]) | (raw > PI_CLIP[1])):
        n_clip = int(np.sum((raw < PI_CLIP[0]) | (raw > PI_CLIP[1])))
        warnings.warn(f"{n_clip} propensity scores clipped to {PI_CLIP}", stacklevel=2)
    return model


def decile_grid(pi_values):
    """Decile midpoints: the 5%, 15%, ..., 95% empirical quantiles."""
    return np.quantile(np.asarray(pi_values, dtype=float), DECILE_LEVELS)


# -- outcomes ------------------------------------------------------------------

def outcome_features(dataset: Dataset, pi, with_treatment=False):
    """Feature dataset ``[a?, x, pi]`` keeping ``r`` as the censoring covariates."""
    cols = [dataset.x, np.asarray(pi, dtype=float)[:, None]]
    if with_treatment:
        cols.insert(0, dataset.a[:, None])
    return Dataset(x=np.hstack(cols), z=dataset.z, a=dataset.a, t_obs=dataset.t_obs,
                   delta=dataset.delta, tau=dataset.tau, r=dataset.r)


def impute_outcome(dataset: Dataset, full_model, features):
    """Observed time for events; ``E[T | T > t_obs, x]`` for censored records."""
    y = dataset.t_obs.copy()
    cens = dataset.delta == 0
    if cens.any():
        y[cens] = full_model.conditional_mean(features[cens], dataset.t_obs[cens])
    return y


def aipw_ate(y, a, pi, mu1, mu0) -> float:
    """Augmented IPW estimate of the average treatment effect.

    ``mean(a / pi (y - mu1) - (1 - a) / (1 - pi) (y - mu0) + mu1 - mu0)``.
    """
    y, a, pi, mu1, mu0 = (np.asarray(v, dtype=float).reshape(-1) for v in (y, a, pi, mu1, mu0))
    if not (np.all(np.isfinite(mu1)) and np.all(np.isfinite(mu0))):
        raise ValidationError("outcome predictions must be finite for every record")
    if np.any((pi <= 0) | (pi >= 1)):
        raise ValidationError("propensity scores must lie strictly inside (0, 1)")
    return float(np.mean(a / pi * (y - mu1) - (1 - a) / (1 - pi) * (y - mu0) + mu1 - mu0))


def pseudo_outcome(y, a, pi, mu1, mu0):
    """DR-learner pseudo-outcome ``(a - pi) / (pi (1 - pi)) (y - mu_a) + mu1 - mu0``."""
    y, a, pi, mu1, mu0 = (np.asarray(v, dtype=float).reshape(-1) for v in (y, a, pi, mu1, mu0))
    mu_a = np.where(a == 1, mu1, mu0)
    return (a - pi) / (pi * (1 - pi)) * (y - mu_a) + mu1 - mu0


def _with_pi(X, pi):
    return np.hstack([X, np.broadcast_to(np.asarray(pi, dtype=float), (X.shape[0],))[:, None]])


def hte_by_decile(mu1_model, mu0_model, X, grid, correction=0.0):
    """Effect with the propensity feature fixed at each grid value.

    ``mean_i[mu1(x_i, q) - mu0(x_i, q)] + correction`` for each ``q``.
    """
    out = np.empty(len(grid))
    for d, q in enumerate(grid):
        F = _with_pi(X, q)
        out[d] = float(np.mean(mu1_model.predict_mean(F) - mu0_model.predict_mean(F))) + correction
    return out


def _fit_arm(fitter, ds: Dataset, arm, seed, stage):
    sub = ds.subset(np.flatnonzero(ds.a == arm))
    if sub.n == 0:
        raise DegenerateError(f"{stage}: arm {arm} is empty")
    try:
        return fitter(sub, seed)
    except DDRSurvError as exc:
        raise type(exc)(f"{stage}: arm {arm}: {exc}") from exc


def naive_plugin_effect(dataset: Dataset, fitter: Callable, seed=0, grid=None, pi_model=None):
    """Arm-specific outcome models evaluated on every record.

    Returns ``(ate, cate, ite)`` where ``cate`` holds the effect with the
    propensity feature fixed at each ``grid`` value (empty without a grid).
    """
    pi_model = pi_model or fit_propensity(dataset)
    pi = pi_model.predict(dataset.z)
    feats = outcome_features(dataset, pi)
    m1 = _fit_arm(fitter, feats, 1, seed, "naive")
    m0 = _fit_arm(fitter, feats, 0, seed + 1, "naive")
    ite = m1.predict_mean(feats.x) - m0.predict_mean(feats.x)
    cate = hte_by_decile(m1, m0, dataset.x, grid) if grid is not None else np.empty(0)
    return float(np.mean(ite)), cate, ite


def _folds_ok(dataset, folds):
    for f in folds:
        a = dataset.a[f]
        if a.size == 0 or a.min() == a.max():
            return False
        for arm in (0, 1):
            if dataset.delta[f][a == arm].sum() == 0:
                return False
    return True


@dataclass
class CrossFitResult:
    ate: float
    cate: np.ndarray
    fold_ates: list
    folds: list
    seed_used: int
    pseudo: list = field(default_factory=list, repr=False)


def dr_cate_crossfit(dataset: Dataset, fitter: Callable, seed=0, grid=None,
                     hte="prediction", folds=None, max_refold=5) -> CrossFitResult:
    """Cross-fitted DR-learner over three folds with cyclic role rotation.

    In rotation ``r`` fold ``r`` fits the propensity, fold ``r + 1`` the arm
    outcome models and the full-data imputation model, and fold ``r + 2``
    forms pseudo-outcomes. The ATE is the average of the three pseudo-outcome
    means.

    ``hte="prediction"`` evaluates the outcome models with the propensity
    feature fixed at each grid value and adds the fold's mean residual
    correction. ``hte="decile"`` instead averages pseudo-outcomes within
    propensity bins delimited by the grid midpoints.
    """
    if hte not in ("prediction", "decile"):
        raise ValidationError("hte must be 'prediction' or 'decile'")
    if dataset.n < 30:
        raise DegenerateError("cross-fitting needs at least 30 records")
    if folds is None:
        s = seed
        for attempt in range(max_refold):
            folds = split_indices(dataset.n, 3, s)
            if _folds_ok(dataset, folds):
                break
            s = seed + 1000003 * (attempt + 1)
        else:
            raise DegenerateError(f"no valid 3-fold split after {max_refold} attempts")
    else:
        s = seed
    grid = np.asarray(grid, dtype=float) if grid is not None else None

    fold_ates, cates, pseudos = [], [], []
    for r in range(3):
        d1, d2, d3 = (dataset.subset(folds[(r + k) % 3]) for k in range(3))
        pi_model = fit_propensity(d1)
        pi2, pi3 = pi_model.predict(d2.z), pi_model.predict(d3.z)
        f2 = outcome_features(d2, pi2)
        f3 = outcome_features(d3, pi3)
        rseed = seed * 7 + r * 101
        m1 = _fit_arm(fitter, f2, 1, rseed, f"rotation {r}")
        m0 = _fit_arm(fitter, f2, 0, rseed + 1, f"rotation {r}")
        full = fitter(outcome_features(d2, pi2, with_treatment=True), rseed + 2)
        y3 = impute_outcome(d3, full, outcome_features(d3, pi3, with_treatment=True).x)
        mu1, mu0 = m1.predict_mean(f3.x), m0.predict_mean(f3.x)
        phi = pseudo_outcome(y3, d3.a, pi3, mu1, mu0)
        ate_r = float(np.mean(phi))
        fold_ates.append(ate_r)
        pseudos.append(phi)
        if grid is None:
            continue
        if hte == "prediction":
            correction = ate_r - float(np.mean(mu1 - mu0))
            cates.append(hte_by_decile(m1, m0, d3.x, grid, correction))
        else:
            edges = np.concatenate([[-np.inf], 0.5 * (grid[1:] + grid[:-1]), [np.inf]])
            bins = np.clip(np.searchsorted(edges, pi3, side="right") - 1, 0, grid.size - 1)
            cates.append(np.array([phi[bins == k].mean() if np.any(bins == k) else np.nan
                                   for k in range(grid.size)]))
    cate = np.nanmean(np.vstack(cates), axis=0) if cates else np.empty(0)
    return CrossFitResult(float(np.mean(fold_ates)), cate, fold_ates, folds, s, pseudos)


# -- bootstrap -----------------------------------------------------------------

@dataclass
class BootstrapResult:
    sd: float
    estimates: np.ndarray
    cate_sd: np.ndarray
    cate_estimates: np.ndarray
    failures: list

    def percentile_ci(self, level=0.95):
        lo = (1 - level) / 2
        return tuple(float(v) for v in np.quantile(self.estimates, [lo, 1 - lo]))


def bootstrap(procedure: Callable, dataset: Dataset, n_boot=100, seed=0,
              max_failure_rate=0.2) -> BootstrapResult:
    """Rerun ``procedure(resampled_dataset, seed)`` on record-level resamples.

    ``procedure`` returns an ATE or ``(ate, cate)``. Replicates raising a
    package error or a numerical error are logged; more than
    ``max_failure_rate`` of them failing raises :class:`BootstrapError`.
    Replicates run sequentially in a fixed order.
    """
    children = np.random.SeedSequence(seed).spawn(n_boot)
    ates, cates, failures = [], [], []
    for b, child in enumerate(children):
        rng = np.random.default_rng(child)
        idx = rng.integers(0, dataset.n, dataset.n)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                out = procedure(dataset.subset(idx), int(rng.integers(2**31 - 1)))
        except (DDRSurvError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            failures.append((b, f"{type(exc).__name__}: {exc}"))
            continue
        if isinstance(out, tuple):
            ates.append(float(out[0]))
            cates.append(np.asarray(out[1], dtype=float))
        else:
            ates.append(float(out))
    if len(failures) > max_failure_rate * n_boot:
        raise BootstrapError(f"{len(failures)} of {n_boot} bootstrap replicates failed", failures)
    est = np.asarray(ates)
    sd = float(np.std(est, ddof=1)) if est.size > 1 else 0.0
    if cates and all(c.size for c in cates):
        cmat = np.vstack(cates)
        csd = np.std(cmat, axis=0, ddof=1) if cmat.shape[0] > 1 else np.zeros(cmat.shape[1])
    else:
        cmat, csd = np.empty((0, 0)), np.empty(0)
    return BootstrapResult(sd, est, csd, cmat, failures)


def bootstrap_sd(procedure: Callable, dataset: Dataset, n_boot=100, seed=0) -> float:
    """Standard deviation of the bootstrap ATE estimates."""
    return bootstrap(procedure, dataset, n_boot, seed).sd


# -- reporting -----------------------------------------------------------------

@dataclass
class EffectReport:
    estimator: str
    ate: float
    ate_sd: float
    grid: Sequence[float]
    cate: Sequence[float]
    cate_sd: Sequence[float]
    n_boot: int
    seed: int
    dataset_hash: str
    config_hash: str = ""
    ci: tuple | None = None
    notes: dict = field(default_factory=dict)

    @property
    def cate_deciles(self):
        return list(zip(self.grid, self.cate))

    def to_dict(self):
        return {
            "estimator": self.estimator,
            "ate": self.ate,
            "ate_sd": self.ate_sd,
            "ci": list(self.ci) if self.ci else None,
            "cate_deciles": [{"pi": float(g), "effect": float(c), "sd": float(s)}
                             for g, c, s in zip(self.grid, self.cate,
                                                self.cate_sd if len(self.cate_sd) else [np.nan] * len(self.cate))],
            "n_boot": self.n_boot,
            "seed": self.seed,
            "dataset_hash": self.dataset_hash,
            "config_hash": self.config_hash,
            "notes": self.notes,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        dec = d.get("cate_deciles", [])
        return cls(
            estimator=d["estimator"], ate=d["ate"], ate_sd=d["ate_sd"],
            grid=[c["pi"] for c in dec], cate=[c["effect"] for c in dec],
            cate_sd=[c["sd"] for c in dec], n_boot=d["n_boot"], seed=d["seed"],
            dataset_hash=d["dataset_hash"], config_hash=d.get("config_hash", ""),
            ci=tuple(d["ci"]) if d.get("ci") else None, notes=d.get("notes", {}),
        )

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def csv_row(self):
        row = [self.estimator, f"{self.ate:.12g}", f"{self.ate_sd:.12g}"]
        return row + [f"{c:.12g}" for c in self.cate]

    def write_hte_csv(self, path):
        """Decile effects with a one-SD band and the ATE line."""
        sd = self.cate_sd if len(self.cate_sd) else [float("nan")] * len(self.cate)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["decile", "pi", "effect", "lower", "upper", "ate"])
            for k, (g, c, s) in enumerate(zip(self.grid, self.cate, sd), start=1):
                w.writerow([k, f"{g:.12g}", f"{c:.12g}", f"{c - s:.12g}", f"{c + s:.12g}",
                            f"{self.ate:.12g}"])
        return path
