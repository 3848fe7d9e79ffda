"""Small fully connected survival network trained on IPCW/DR losses.

Pure numpy: ReLU hidden layers, manual backpropagation and Adam. Supported
targets:

``cox-beta``
    Linear output ``eta(x)`` used as a log risk score; trained on the weighted
    negative log partial likelihood within each mini-batch. A Breslow baseline
    is attached after training.
``survival-prob``
    Sigmoid output ``p(x)``, the average survival probability over
    ``[0, t_max]`` (so ``p * t_max`` is the restricted mean). The curve is
    anchored: ``S = p`` on ``[0, t_max)`` and ``0`` from ``t_max`` on.
``mean-time``
    Linear output regressed on the observed time (in units of the mean time).
``parametric-params``
    Linear output is the log rate of an exponential model.

Complete-case weights ``delta_tau / G`` make the gradient of the DR loss equal
to the gradient of its IPW part, since the augmentation term is held fixed
during a step.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .censoring import CensoringModel
from .cox import breslow_baseline
from .data import Dataset
from .dr_loss import dr_loss_ltrc, fit_conditional_loss, ipcw_weights
from .exceptions import TrainingError, ValidationError
from .parametric import Exponential
from .survival_math import (
    ParametricSurvival,
    StepCumHaz,
    StepSurvival,
    conditional_mean_exp_tail,
    conditional_mean_steps,
    integrate_steps,
)

__all__ = [
    "Mlp",
    "init_mlp",
    "forward",
    "backward",
    "Adam",
    "TrainConfig",
    "NeuralSurvivalModel",
    "target_loss",
    "train",
    "predict_survival_nn",
]

TARGETS = ("cox-beta", "survival-prob", "mean-time", "parametric-params")
OUTPUTS = ("sigmoid", "linear", "exp")


# -- network -----------------------------------------------------------------

@dataclass
class Mlp:
    """Weights ``W[k]`` of shape ``(in, out)`` and biases ``b[k]``."""

    sizes: list
    W: list
    b: list
    output: str = "linear"

    @property
    def params(self):
        return self.W + self.b

    def copy(self):
        return Mlp(list(self.sizes), [w.copy() for w in self.W], [v.copy() for v in self.b], self.output)

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        pos = 0
        for arr in self.params:
            arr[...] = theta[pos:pos + arr.size].reshape(arr.shape)
            pos += arr.size


def init_mlp(sizes, output="linear", seed=0, zero=False) -> Mlp:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialisation."""
    if output not in OUTPUTS:
        raise ValidationError(f"unknown output activation {output!r}")
    rng = np.random.default_rng(seed)
    W, b = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in) if fan_in else 0.0
        if zero:
            W.append(np.zeros((fan_in, fan_out)))
            b.append(np.zeros(fan_out))
        else:
            W.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            b.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(list(sizes), W, b, output)


def _activate(z, output):
    if output == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if output == "exp":
        return np.exp(z)
    return z


def forward(net: Mlp, X):
    """Network output for rows of ``X``; returns ``(out, cache)``."""
    h = np.atleast_2d(np.asarray(X, dtype=float))
    if h.shape[1] != net.sizes[0]:
        raise ValidationError(f"expected {net.sizes[0]} inputs, got {h.shape[1]}")
    if not all(np.all(np.isfinite(p)) for p in net.params):
        raise TrainingError("non-finite network parameters")
    acts = [h]
    pre = []
    last = len(net.W) - 1
    for k, (W, b) in enumerate(zip(net.W, net.b)):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0) if k < last else _activate(z, net.output)
        acts.append(h)
    return h[:, 0], (acts, pre)


def backward(net: Mlp, cache, grad_out):
    """Gradients of a scalar loss w.r.t. all weights given ``dloss/dout``."""
    acts, pre = cache
    out = acts[-1][:, 0]
    g = np.asarray(grad_out, dtype=float).reshape(-1)
    if net.output == "sigmoid":
        g = g * out * (1.0 - out)
    elif net.output == "exp":
        g = g * out
    delta = g[:, None]
    gW = [None] * len(net.W)
    gb = [None] * len(net.W)
    for k in range(len(net.W) - 1, -1, -1):
        gW[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ net.W[k].T) * (pre[k - 1] > 0)
    grads = gW + gb
    if not all(np.all(np.isfinite(x)) for x in grads):
        raise TrainingError("non-finite gradient")
    return grads


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- targets ------------------------------------------------------------------

def _batch_cox(eta, t, entry, w):
    """Per-record partial-likelihood losses within the batch and the
    gradient of ``mean(w * loss)`` w.r.t. ``eta``."""
    n = eta.size
    at_risk = (t[None, :] >= t[:, None]) & (entry[None, :] < t[:, None])   # [i, j]: j in R_i
    np.fill_diagonal(at_risk, True)
    shift = eta.max()
    r = np.exp(eta - shift)
    S = at_risk @ r
    losses = -eta + np.log(S) + shift
    coef = w / S
    grad = (-w + r * (at_risk.T @ coef)) / n
    return losses, grad


def target_loss(target, out, t, entry, w, t_max=1.0, y_scale=1.0):
    """Per-record losses and the gradient of ``mean(w * loss)`` w.r.t. ``out``.

    ``entry`` (left-truncation times) only matters for the ``cox-beta`` risk sets.
    """
    n = out.size
    if target == "cox-beta":
        return _batch_cox(out, t, entry, w)
    if target == "survival-prob":
        y = np.minimum(t, t_max) / t_max
        losses = (out - y) ** 2
        return losses, 2.0 * w * (out - y) / n
    if target == "mean-time":
        y = t / y_scale
        losses = (out - y) ** 2
        return losses, 2.0 * w * (out - y) / n
    if target == "parametric-params":
        losses = -out + np.exp(out) * t
        return losses, w * (-1.0 + np.exp(out) * t) / n
    raise ValidationError(f"unknown target {target!r}")


def _marginal_bias(target, t, w, t_max, y_scale):
    """Output bias at which a covariate-free network minimises the weighted loss."""
    wsum = max(float(np.sum(w)), 1e-12)
    if target == "survival-prob":
        p = float(np.sum(w * np.minimum(t, t_max))) / (wsum * t_max)
        p = min(max(p, 1e-3), 1.0 - 1e-3)
        return math.log(p / (1.0 - p))
    if target == "mean-time":
        return float(np.sum(w * t)) / (wsum * y_scale)
    # exponential rate: weighted events over weighted exposure
    return math.log(wsum / max(float(np.sum(w * t)), 1e-12))


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    hidden: tuple = (32, 32)
    seed: int = 0
    target: str = "cox-beta"
    val_fraction: float = 0.2
    zero_output: bool = False
    restore_best: bool = False
    track_loss: bool = True
    init_bias: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if self.target not in TARGETS:
            raise ValidationError(f"unknown target {self.target!r}; expected one of {TARGETS}")
        if not 0 <= self.val_fraction < 1:
            raise ValidationError("val_fraction must lie in [0, 1)")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class NeuralSurvivalModel:
    net: Mlp
    config: TrainConfig
    center: np.ndarray
    scale: np.ndarray
    t_max: float
    y_scale: float = 1.0
    baseline: StepCumHaz | None = None
    history: dict = field(default_factory=lambda: {"train": [], "val": []})
    eta_range: tuple = (-np.inf, np.inf)
    best_epoch: int | None = None

    def output(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out, _ = forward(self.net, (X - self.center) / self.scale)
        return out

    def survival_matrix(self, X):
        """Knot times and ``S(t_k | x_i)`` for step-curve targets."""
        out = self.output(X)
        if self.config.target == "cox-beta":
            with np.errstate(over="ignore"):
                S = np.exp(-np.outer(np.exp(out), self.baseline.values))
            return self.baseline.times, S
        if self.config.target == "survival-prob":
            return np.array([self.t_max]), np.zeros((out.size, 1))
        raise ValidationError(f"target {self.config.target!r} has no step curve")

    def predict_curve(self, x):
        out = self.output(x)
        tgt = self.config.target
        if tgt == "cox-beta":
            times, S = self.survival_matrix(x)
            return StepSurvival(times, S[0], t_max=self.t_max)
        if tgt == "survival-prob":
            return StepSurvival([self.t_max], [0.0], initial=float(out[0]), t_max=self.t_max)
        return ParametricSurvival(Exponential(1.0 / self._mean_from_output(out)[0]))

    def _mean_from_output(self, out):
        if self.config.target == "mean-time":
            return np.maximum(out * self.y_scale, 1e-8)
        return np.exp(-out)

    def predict_mean(self, X):
        tgt = self.config.target
        if tgt == "cox-beta":
            times, S = self.survival_matrix(X)
            return integrate_steps(times, S, self.t_max)
        if tgt == "survival-prob":
            return self.output(X) * self.t_max
        return self._mean_from_output(self.output(X))

    @property
    def baseline_rate(self):
        if self.baseline is None or self.baseline.times.size == 0 or self.baseline.times[-1] <= 0:
            return 0.0
        return float(self.baseline.values[-1] / self.baseline.times[-1])

    def conditional_mean(self, X, c, tail="exponential"):
        """``E[T | T > c, x]`` under the fitted curve.

        For ``cox-beta`` the curve is continued past the last event time with
        an exponential tail (``tail="exponential"``) or stopped at ``t_max``
        (``"restricted"``).
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = np.broadcast_to(np.asarray(c, dtype=float), (X.shape[0],))
        tgt = self.config.target
        if tgt == "cox-beta":
            times, S = self.survival_matrix(X)
            if tail == "exponential":
                rates = np.exp(np.clip(self.output(X), *self.eta_range)) * self.baseline_rate
                return conditional_mean_exp_tail(times, S, c, rates)
            if times.size == 0 or self.t_max > times[-1]:
                times = np.append(times, self.t_max)
                S = np.hstack([S, S[:, -1:] if S.shape[1] else np.ones((S.shape[0], 1))])
            return conditional_mean_steps(times, S, c)
        if tgt == "survival-prob":
            return np.maximum(c, self.t_max)
        return c + self._mean_from_output(self.output(X))   # memoryless

    def to_json(self):
        return json.dumps({
            "sizes": self.net.sizes,
            "output": self.net.output,
            "weights": self.net.flat().tolist(),
            "config": asdict(self.config),
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "t_max": self.t_max,
            "y_scale": self.y_scale,
            "baseline": None if self.baseline is None else
            {"knots": self.baseline.times.tolist(), "values": self.baseline.values.tolist()},
            "eta_range": list(self.eta_range),
            "final_losses": {k: (v[-1] if v else None) for k, v in self.history.items()},
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        net = init_mlp(d["sizes"], d["output"], zero=True)
        net.set_flat(d["weights"])
        cfg = dict(d["config"])
        cfg["hidden"] = tuple(cfg["hidden"])
        base = d["baseline"]
        return cls(net, TrainConfig(**cfg), np.array(d["center"]), np.array(d["scale"]),
                   d["t_max"], d["y_scale"],
                   None if base is None else StepCumHaz(base["knots"], base["values"]),
                   eta_range=tuple(d.get("eta_range", (-np.inf, np.inf))))


def _output_for(target):
    return "sigmoid" if target == "survival-prob" else "linear"


def _epoch_loss(model, ds: Dataset, g, w):
    """DR loss (augmented form) of the current network on ``ds``."""
    out = model.output(ds.x)
    losses, _ = target_loss(model.config.target, out, ds.t_obs, ds.tau, w,
                            model.t_max, model.y_scale)
    u = fit_conditional_loss(losses, ds, weights=w) if np.any(w > 0) else 0.0
    return dr_loss_ltrc(losses, ds, g, u, form=1)


def train(dataset: Dataset, config: TrainConfig | None = None,
          g: CensoringModel | None = None) -> NeuralSurvivalModel:
    """Fit the network on ``dataset.x`` against the DR loss.

    ``g`` defaults to no censoring adjustment. A fraction ``val_fraction`` of
    records (chosen by ``config.seed``) is held out for the validation curve;
    the Breslow baseline for ``cox-beta`` uses every record.

    Raises
    ------
    TrainingError
        Loss or gradient becomes non-finite; ``.epoch`` gives the epoch.
    """
    config = config or TrainConfig()
    g = g or CensoringModel.constant()
    if dataset.n == 0:
        raise ValidationError("empty dataset")
    rng = np.random.default_rng(config.seed)
    X = dataset.x
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Xs = (X - center) / scale

    w_all = ipcw_weights(dataset, g, use_tau=True)
    events = dataset.delta_tau > 0
    t_max = float(dataset.t_obs[events].max()) if events.any() else float(dataset.t_obs.max())
    y_scale = float(np.mean(dataset.t_obs[events])) if events.any() else 1.0
    if config.target == "survival-prob" and t_max <= 0:
        raise ValidationError("anchor time must be positive")

    perm = rng.permutation(dataset.n)
    n_val = int(round(config.val_fraction * dataset.n)) if dataset.n >= 10 else 0
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])

    net = init_mlp([X.shape[1], *config.hidden, 1], _output_for(config.target),
                   seed=int(rng.integers(2**63 - 1)))
    if config.zero_output:
        net.W[-1][...] = 0.0
        net.b[-1][...] = 0.0
    if config.init_bias and config.target != "cox-beta":
        net.b[-1][...] = _marginal_bias(config.target, dataset.t_obs[tr_idx], w_all[tr_idx],
                                        t_max, y_scale)
    model = NeuralSurvivalModel(net, config, center, scale, t_max, y_scale)
    opt = Adam(net.params, lr=config.lr)
    tr_ds = dataset.subset(tr_idx)
    val_ds = dataset.subset(val_idx) if n_val else None

    best = None
    for epoch in range(config.epochs):
        order = tr_idx[rng.permutation(tr_idx.size)]
        for start in range(0, order.size, config.batch_size):
            b = order[start:start + config.batch_size]
            out, cache = forward(net, Xs[b])
            _, grad_out = target_loss(config.target, out, dataset.t_obs[b], dataset.tau[b],
                                      w_all[b], t_max, y_scale)
            try:
                grads = backward(net, cache, grad_out)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}", epoch=epoch) from None
            opt.step(net.params, grads)
        if not (config.track_loss or config.restore_best):
            continue
        tr_loss = _epoch_loss(model, tr_ds, g, w_all[tr_idx])
        if not math.isfinite(tr_loss):
            raise TrainingError(f"epoch {epoch}: non-finite training loss", epoch=epoch)
        model.history["train"].append(tr_loss)
        if val_ds is not None:
            val_loss = _epoch_loss(model, val_ds, g, w_all[val_idx])
            model.history["val"].append(val_loss)
            if config.restore_best and (best is None or val_loss < best[0]):
                best = (val_loss, epoch, net.flat())

    if best is not None:
        net.set_flat(best[2])
        model.best_epoch = best[1]

    if config.target == "cox-beta":
        entry = dataset.tau if np.any(dataset.tau > 0) else None
        model.baseline = breslow_baseline(np.ones(1), model.output(X)[:, None],
                                          dataset.t_obs, dataset.delta, entry)
        model.t_max = float(dataset.t_obs[dataset.t_obs > dataset.tau].max(initial=0.0))
        eta = model.output(X)
        model.eta_range = (float(eta.min()), float(eta.max()))
    return model


def predict_survival_nn(model: NeuralSurvivalModel, x):
    """Curve and mean survival for one covariate vector."""
    curve = model.predict_curve(x)
    return curve, float(model.predict_mean(np.atleast_2d(x))[0])
