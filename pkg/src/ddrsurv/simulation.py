"""Synthetic left-truncated right-censored data with a known treatment effect.

Default design: ten integer covariates uniform on 1..100 (unrelated to the
outcome), two assignment covariates uniform on (0, 1), treatment when either
exceeds ``1/sqrt(2)``, exponential failure times with mean 2 (treated) or 1
(control) and independent exponential censoring with mean 1.5. The 5% of
subjects failing earliest are removed (left truncation at ``tau``).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import Dataset
from .exceptions import DegenerateError, ParameterError

__all__ = ["SimConfig", "TruthRecord", "generate", "generate_variant", "VARIANTS"]

VARIANTS = ("null-effect", "no-censoring", "heavy-censoring", "heterogeneous")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``rule`` selects ``"or"`` (either assignment covariate above the cutoff)
    or ``"and"`` (both above). ``censoring`` reads ``censoring_param`` as the
    exponential ``"mean"`` or ``"rate"``. ``effect="heterogeneous"`` gives the
    treated arm mean ``1 + z1``.
    """

    n: int = 500
    p: int = 10
    x_low: int = 1
    x_high: int = 100
    q: int = 2
    rule: str = "or"
    cutoff: float = 1.0 / math.sqrt(2.0)
    mean_treated: float = 2.0
    mean_control: float = 1.0
    effect: str = "constant"
    truncation_quantile: float = 0.95
    censoring: str = "mean"
    censoring_param: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 0 or self.q < 2:
            raise ParameterError("need n >= 2, p >= 0 and q >= 2")
        if not (self.mean_treated > 0 and self.mean_control > 0):
            raise ParameterError("arm means must be positive")
        if not 0 < self.truncation_quantile <= 1:
            raise ParameterError("truncation quantile must lie in (0, 1]")
        if self.rule not in ("or", "and"):
            raise ParameterError(f"rule must be 'or' or 'and', got {self.rule!r}")
        if self.censoring not in ("mean", "rate", "none"):
            raise ParameterError(f"censoring must be 'mean', 'rate' or 'none', got {self.censoring!r}")
        if self.censoring != "none" and not self.censoring_param > 0:
            raise ParameterError("censoring parameter must be positive")
        if self.effect not in ("constant", "heterogeneous"):
            raise ParameterError(f"unknown effect {self.effect!r}")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TruthRecord:
    """Ground truth for a simulated dataset.

    Per-record arrays refer to retained (untruncated) records. ``mu1``/``mu0``
    are the potential-outcome means given survival past ``tau``.
    """

    ate: float
    mean_treated: float
    mean_control: float
    tau: float
    n_generated: int
    n_treated: int
    n_control: int
    n_truncated: int
    n_censored: int
    n_censored_retained: int
    failure_times: np.ndarray = field(repr=False)
    mu1: np.ndarray = field(repr=False)
    mu0: np.ndarray = field(repr=False)
    config: dict = field(default_factory=dict)

    @property
    def ate_retained(self):
        return float(np.mean(self.mu1 - self.mu0))

    def to_dict(self):
        return {
            "ate": self.ate,
            "ate_retained": self.ate_retained,
            "mean_treated": self.mean_treated,
            "mean_control": self.mean_control,
            "tau": self.tau,
            "counts": {
                "generated": self.n_generated,
                "treated": self.n_treated,
                "control": self.n_control,
                "truncated": self.n_truncated,
                "censored": self.n_censored,
                "censored_retained": self.n_censored_retained,
            },
            "config": self.config,
        }


def _assign(z, rule, cutoff):
    above = z[:, :2] > cutoff
    return (above.any(axis=1) if rule == "or" else above.all(axis=1)).astype(float)


def generate(config: SimConfig | None = None):
    """Draw one dataset; returns ``(Dataset, TruthRecord)``.

    Truncation removes exactly ``ceil((1 - q) n)`` subjects: ``tau`` is the
    midpoint between the corresponding order statistics of the failure times.
    Counts of treated, control and censored subjects refer to all ``n``
    generated subjects; ``n_censored_retained`` counts those kept.
    """
    cfg = config or SimConfig()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    x = rng.integers(cfg.x_low, cfg.x_high + 1, size=(n, cfg.p)).astype(float)
    z = rng.uniform(0.0, 1.0, size=(n, cfg.q))
    a = _assign(z, cfg.rule, cfg.cutoff)
    if a.sum() == 0 or a.sum() == n:
        raise DegenerateError(f"seed {cfg.seed}: one treatment arm is empty; reseed")

    if cfg.effect == "heterogeneous":
        mean1 = 1.0 + z[:, 0]
    else:
        mean1 = np.full(n, cfg.mean_treated)
    mean0 = np.full(n, cfg.mean_control)
    means = np.where(a == 1, mean1, mean0)
    T = rng.exponential(means)
    if cfg.censoring == "none":
        C = np.full(n, np.inf)
    else:
        c_mean = cfg.censoring_param if cfg.censoring == "mean" else 1.0 / cfg.censoring_param
        C = rng.exponential(c_mean, size=n)

    k = math.ceil(round((1.0 - cfg.truncation_quantile) * n, 9))
    srt = np.sort(T)
    if k == 0:
        tau = 0.0
    elif k >= n:
        raise DegenerateError("truncation removes every subject")
    else:
        tau = 0.5 * (srt[k - 1] + srt[k])
    keep = T >= tau
    t_obs = np.minimum(T, C)
    delta = (T < C).astype(float)

    ds = Dataset(x=x[keep], z=z[keep], a=a[keep], t_obs=t_obs[keep], delta=delta[keep], tau=tau)
    # memoryless: E[T | T >= tau] = tau + mean
    truth = TruthRecord(
        ate=float(np.mean(mean1 - mean0)) if cfg.effect == "heterogeneous"
        else cfg.mean_treated - cfg.mean_control,
        mean_treated=float(np.mean(mean1)),
        mean_control=cfg.mean_control,
        tau=float(tau),
        n_generated=n,
        n_treated=int(a.sum()),
        n_control=int(n - a.sum()),
        n_truncated=int(np.sum(~keep)),
        n_censored=int(np.sum(delta == 0)),
        n_censored_retained=int(np.sum(delta[keep] == 0)),
        failure_times=T[keep],
        mu1=tau + mean1[keep],
        mu0=tau + mean0[keep],
        config=asdict(cfg),
    )
    return ds, truth


def generate_variant(kind: str, seed: int = 0, **overrides):
    """Oracle designs: ``null-effect`` (both arm means 1), ``no-censoring``,
    ``heavy-censoring`` (rate 1.5) and ``heterogeneous`` (treated mean ``1 + z1``)."""
    changes = {
        "null-effect": {"mean_treated": 1.0, "mean_control": 1.0},
        "no-censoring": {"censoring": "none"},
        "heavy-censoring": {"censoring": "rate", "censoring_param": 1.5},
        "heterogeneous": {"effect": "heterogeneous"},
    }
    if kind not in changes:
        raise ParameterError(f"unknown variant {kind!r}; expected one of {VARIANTS}")
    cfg = replace(SimConfig(seed=seed), **{**changes[kind], **overrides})
    return generate(cfg)
