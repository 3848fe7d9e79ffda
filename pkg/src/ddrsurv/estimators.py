"""The five effect pipelines and a runner that attaches bootstrap errors.

=========  ===============================================================
tag        pipeline
=========  ===============================================================
mhr        one Cox fit on ``[a, pi]``; effects contrast ``a = 1`` vs ``0``
naive-cox  arm-specific Cox models, plug-in mean difference
naive-nn   arm-specific networks (anchored probability), plug-in
dr-cox     cross-fitted DR-learner with Cox outcome models
dr-nn      cross-fitted DR-learner with Cox-score networks
=========  ===============================================================
"""

from __future__ import annotations

import warnings

import numpy as np

from .causal import (
    EffectReport,
    bootstrap,
    decile_grid,
    dr_cate_crossfit,
    fit_propensity,
    naive_plugin_effect,
)
from .censoring import fit_censoring
from .cox import cox_fit
from .data import Dataset
from .exceptions import ValidationError
from .neural import TrainConfig, train

__all__ = [
    "ESTIMATORS",
    "cox_fitter",
    "nn_fitter",
    "mhr_estimate",
    "run_pipeline",
    "run_estimator",
]

ESTIMATORS = ("mhr", "naive-cox", "naive-nn", "dr-cox", "dr-nn")

IMPUTATION_NOTE = ("censored outcomes imputed by E[T | T > t_obs, a, x, pi] "
                   "from a full-data model fitted on the outcome fold")


def cox_fitter(ds: Dataset, seed=0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return cox_fit(ds)


def nn_fitter(target="cox-beta", censoring="cox", **config):
    """Factory for network fitters trained against the DR loss."""
    def fit(ds: Dataset, seed=0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = fit_censoring(ds, censoring)
        return train(ds, TrainConfig(seed=seed, target=target, **config), g)
    return fit


def mhr_estimate(dataset: Dataset, grid=None, pi_model=None):
    """Single Cox fit on treatment and propensity score.

    Returns ``(ate, cate, model)``: the mean-survival contrast between
    ``a = 1`` and ``a = 0`` at each record's own propensity, and at each
    ``grid`` value of the propensity.
    """
    pi_model = pi_model or fit_propensity(dataset)
    pi = pi_model.predict(dataset.z)
    entry = dataset.tau if np.any(dataset.tau > 0) else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = cox_fit(np.column_stack([dataset.a, pi]), dataset.t_obs, dataset.delta, entry=entry)
    on = model.predict_mean(np.column_stack([np.ones(dataset.n), pi]))
    off = model.predict_mean(np.column_stack([np.zeros(dataset.n), pi]))
    ate = float(np.mean(on - off))
    cate = np.empty(0)
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        cate = (model.predict_mean(np.column_stack([np.ones(grid.size), grid]))
                - model.predict_mean(np.column_stack([np.zeros(grid.size), grid])))
    return ate, cate, model


def run_pipeline(tag, dataset: Dataset, seed=0, grid=None, hte="prediction", nn_config=None):
    """Point estimate ``(ate, cate)`` for one estimator."""
    nn_config = dict(nn_config or {})
    if tag == "mhr":
        ate, cate, _ = mhr_estimate(dataset, grid)
        return ate, cate
    if tag == "naive-cox":
        ate, cate, _ = naive_plugin_effect(dataset, cox_fitter, seed, grid)
        return ate, cate
    if tag == "naive-nn":
        fitter = nn_fitter("survival-prob", **nn_config)
        ate, cate, _ = naive_plugin_effect(dataset, fitter, seed, grid)
        return ate, cate
    if tag == "dr-cox":
        res = dr_cate_crossfit(dataset, cox_fitter, seed, grid, hte=hte)
        return res.ate, res.cate
    if tag == "dr-nn":
        res = dr_cate_crossfit(dataset, nn_fitter("cox-beta", **nn_config), seed, grid, hte=hte)
        return res.ate, res.cate
    raise ValidationError(f"unknown estimator {tag!r}; expected one of {ESTIMATORS}")


def run_estimator(tag, dataset: Dataset, seed=0, n_boot=100, grid=None, config_hash="",
                  hte="prediction", nn_config=None) -> EffectReport:
    """Point estimate plus bootstrap standard deviations, as an :class:`EffectReport`.

    The propensity grid is computed once from the full data and held fixed
    across bootstrap replicates.
    """
    if tag not in ESTIMATORS:
        raise ValidationError(f"unknown estimator {tag!r}; expected one of {ESTIMATORS}")
    if grid is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            grid = decile_grid(fit_propensity(dataset).predict(dataset.z))
    ate, cate = run_pipeline(tag, dataset, seed, grid, hte, nn_config)
    notes = {"hte": hte if tag.startswith("dr") else "plug-in"}
    if tag.startswith("dr"):
        notes["imputation"] = IMPUTATION_NOTE
    if n_boot > 0:
        # loss curves are not needed for replicates and do not affect the fit
        boot_nn = {"track_loss": False, **(nn_config or {})}
        boot = bootstrap(lambda ds, s: run_pipeline(tag, ds, s, grid, hte, boot_nn),
                         dataset, n_boot, seed)
        sd, cate_sd, ci = boot.sd, boot.cate_sd, boot.percentile_ci()
        notes["bootstrap_failures"] = len(boot.failures)
    else:
        sd, cate_sd, ci = float("nan"), np.full(len(cate), np.nan), None
    return EffectReport(tag, float(ate), sd, list(map(float, grid)), list(map(float, cate)),
                        list(map(float, cate_sd)), n_boot, seed, dataset.content_hash(),
                        config_hash, ci, notes)
