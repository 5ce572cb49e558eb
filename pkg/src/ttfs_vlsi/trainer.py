"""Supervised training of ideal TTFS networks and constrained evaluation.

Spike times are differentiable almost everywhere: on a fixed causal set
``G_i`` the crossing time is ``t_i = (v_th + sum_{j in G_i} w_ij t_j) / S_i``
with ``S_i = sum_{j in G_i} w_ij``, so gradients are exact and need no
surrogate.  Circuit constraints are never active while training.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .core import ConfigError, ConstraintConfig, NetworkModel
from .simulator import EncoderConfig, encode_batch, run_batch

__all__ = [
    "TrainConfig",
    "EvalReport",
    "TrainingDiverged",
    "TrainResult",
    "compute_loss",
    "backprop_gradients",
    "fan_in_penalty",
    "forward_ideal_batch",
    "batch_loss_and_gradients",
    "train",
    "evaluate",
]

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 1.0
    jitter_sigma: float = 0.1
    seed: int = 0
    fan_in_penalty_coeff: float = 1e-3
    horizon: float = 15.0
    grad_clip: float = 10.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size > 0")
        if not (self.learning_rate > 0 and self.gamma > 0 and self.horizon > 0):
            raise ConfigError("learning_rate, gamma and horizon must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.jitter_sigma < 0 or self.fan_in_penalty_coeff < 0 or self.grad_clip < 0:
            raise ConfigError("jitter_sigma, fan_in_penalty_coeff and grad_clip must be non-negative")


@dataclass
class EvalReport:
    accuracy: float
    mean_earliest_output_time: float
    no_spike_rate: float
    tie_rate: float
    confusion: np.ndarray
    n_samples: int
    mean_earliest_output_tick: Optional[float] = None

    def as_row(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "mean_earliest_output_time": self.mean_earliest_output_time,
            "mean_earliest_output_tick": self.mean_earliest_output_tick,
            "no_spike_rate": self.no_spike_rate,
            "tie_rate": self.tie_rate,
            "n_samples": self.n_samples,
        }


@dataclass
class TrainResult:
    model: NetworkModel
    history: list = field(default_factory=list)
    config: Optional[TrainConfig] = None


def compute_loss(output_times, label: int, gamma: float = 1.0):
    """Softmax cross-entropy over ``-t / gamma``; returns ``(loss, dL/dt)``."""
    t = np.asarray(output_times, dtype=np.float64)
    if not 0 <= label < t.size:
        raise ConfigError(f"label {label} out of range for {t.size} outputs")
    z = -t / gamma
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    loss = -math.log(max(p[label], 1e-300))
    grad = -p / gamma
    grad[label] += 1.0 / gamma
    return float(loss), grad


def _batch_loss(times: np.ndarray, labels: np.ndarray, gamma: float):
    z = -times / gamma
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    rows = np.arange(len(labels))
    losses = -np.log(np.maximum(p[rows, labels], 1e-300))
    grad = -p / gamma
    grad[rows, labels] += 1.0 / gamma
    return losses, grad


def fan_in_penalty(model: NetworkModel, coeff: float):
    """``coeff * sum_i max(0, v_th/tau - sum_j w_ij)^2`` and its gradient."""
    floor = model.v_th_model / model.tau
    value = 0.0
    grads = []
    for w in model.weights:
        deficit = np.maximum(0.0, floor - w.sum(axis=1))
        value += coeff * float(np.sum(deficit**2))
        grads.append(np.repeat((-2.0 * coeff * deficit)[:, None], w.shape[1], axis=1))
    return value, grads


def backprop_gradients(model: NetworkModel, activities, dL_dt_output):
    """Weight gradients for one sample from ideal-mode activities.

    ``activities`` holds one :class:`LayerActivity` per layer (input first)
    with causal sets.  Silent neurons pass no gradient.
    """
    grads = [np.zeros_like(w) for w in model.weights]
    g_t = np.array(dL_dt_output, dtype=np.float64)
    for l in range(len(model.weights), 0, -1):
        w = model.weights[l - 1]
        post = activities[l]
        pre_t = activities[l - 1].spike_times
        if post.causal_sets is None:
            raise ConfigError(f"layer {l} has no causal sets (ideal mode required)")
        g_pre = np.zeros(len(pre_t))
        for i, causal in enumerate(post.causal_sets):
            if causal is None or g_t[i] == 0.0:
                continue
            if len(causal) == 0:
                raise ConfigError(f"neuron {i} of layer {l} fired with an empty causal set")
            s = w[i, causal].sum()
            if s <= 0.0:
                raise ConfigError(f"neuron {i} of layer {l} fired with non-positive slope")
            ti = post.spike_times[i]
            grads[l - 1][i, causal] += g_t[i] * (pre_t[causal] - ti) / s
            g_pre[causal] += g_t[i] * w[i, causal] / s
        g_t = g_pre
    return grads


def forward_ideal_batch(weights, t_in: np.ndarray, v_th: float, horizon: float):
    """Ideal forward pass keeping what the backward pass needs."""
    acts = []
    t = np.ascontiguousarray(t_in, dtype=np.float64)
    seeds = np.zeros(len(t), dtype=np.uint32)
    for w in weights:
        t_out, _, nc, order, _, _, _, _, _ = _kernels.layer_forward(
            np.ascontiguousarray(w), t, seeds, v_th, horizon, 0, 0.0, False, -np.inf, 0.0, False, 1
        )
        acts.append((t, order, t_out, nc))
        t = t_out
    return acts


def batch_loss_and_gradients(model: NetworkModel, t_in: np.ndarray, labels: np.ndarray, gamma: float, horizon: float):
    """Mean loss, per-layer weight gradients and output times for a batch."""
    acts = forward_ideal_batch(model.weights, t_in, model.v_th_model, horizon)
    out = acts[-1][2]
    filled = _extrapolate_silent(model.weights[-1], acts[-1], model.v_th_model, horizon)
    losses, g = _batch_loss(filled, labels, gamma)
    g = g / len(labels)
    g[~np.isfinite(out) & (filled <= horizon)] = 0.0
    acts[-1] = (acts[-1][0], acts[-1][1], np.where(filled > horizon, filled, out), acts[-1][3])
    grads = [np.zeros_like(w) for w in model.weights]
    for l in range(len(model.weights) - 1, -1, -1):
        t_prev, order, t_out, nc = acts[l]
        g_in = np.zeros_like(t_prev)
        _kernels.layer_backward(
            np.ascontiguousarray(model.weights[l]), t_prev, order, t_out, nc, np.ascontiguousarray(g), grads[l], g_in, l > 0
        )
        g = g_in
    return float(losses.mean()), grads, out


def _extrapolate_silent(w, act, v_th, horizon):
    """Output times with silent neurons replaced by their extrapolated crossing.

    A neuron still rising at the horizon gets ``(v_th + sum w t) / S`` over
    all of its inputs, which lies beyond the horizon and keeps a gradient.
    Neurons with a non-positive final slope sit at ``horizon``.
    """
    t_prev, order, t_out, nc = act
    filled = np.where(np.isfinite(t_out), t_out, horizon)
    rows, cols = np.nonzero(~np.isfinite(t_out))
    for b, i in zip(rows, cols):
        j = order[b, : nc[b, i]]
        s = w[i, j].sum()
        if s > 0.0:
            filled[b, i] = max(horizon, (v_th + np.dot(w[i, j], t_prev[b, j])) / s)
    return filled


class _Adam:
    def __init__(self, shapes, lr, b1, b2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.k = 0

    def step(self, params, grads):
        self.k += 1
        c1 = 1.0 - self.b1**self.k
        c2 = 1.0 - self.b2**self.k
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def _pixels(images) -> np.ndarray:
    x = np.asarray(images)
    return x / 255.0 if x.dtype == np.uint8 else x.astype(np.float64)


def train(
    model: NetworkModel,
    dataset,
    config: TrainConfig = TrainConfig(),
    enc: Optional[EncoderConfig] = None,
    validation=None,
    callback: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Mini-batch training in ideal mode with input-timing jitter.

    ``dataset`` (and ``validation``) expose ``images`` (N x pixels, uint8 or
    [0, 1] floats) and ``labels``.  One history entry is produced per epoch.
    """
    enc = enc or EncoderConfig(tau=model.tau, jitter_sigma=config.jitter_sigma, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    x_all = _pixels(dataset.images)
    y_all = np.asarray(dataset.labels, dtype=np.int64)
    if x_all.shape[1] != model.layer_sizes[0]:
        raise ConfigError(f"dataset has {x_all.shape[1]} pixels, model expects {model.layer_sizes[0]}")
    if y_all.max(initial=0) >= model.layer_sizes[-1]:
        raise ConfigError("labels exceed the output layer width")

    params = [np.array(w) for w in model.weights]
    if config.optimizer == "adam":
        opt = _Adam([p.shape for p in params], config.learning_rate, config.beta1, config.beta2, config.eps)
    else:
        opt = _SGD(config.learning_rate)

    history = []
    current = model
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(y_all))
        total, correct, seen = 0.0, 0, 0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            t_in = encode_batch(x_all[idx], enc.tau, enc.jitter_sigma, rng)
            loss, grads, out = batch_loss_and_gradients(current, t_in, y_all[idx], config.gamma, config.horizon)
            if config.fan_in_penalty_coeff > 0:
                pen, pen_grads = fan_in_penalty(current, config.fan_in_penalty_coeff)
                loss += pen
                grads = [g + pg for g, pg in zip(grads, pen_grads)]
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {start}")
            if config.grad_clip > 0:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > config.grad_clip:
                    grads = [g * (config.grad_clip / norm) for g in grads]
            opt.step(params, grads)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDiverged(f"non-finite weights after epoch {epoch}, batch starting {start}")
            current = current.with_weights(params)
            total += loss * len(idx)
            seen += len(idx)
            fired = np.isfinite(out).any(axis=1)
            correct += int(np.sum(fired & (np.argmin(out, axis=1) == y_all[idx])))
        entry = {"epoch": epoch, "train_loss": total / max(seen, 1), "train_accuracy": correct / max(seen, 1)}
        if validation is not None:
            entry["val_accuracy"] = evaluate(current, validation, ConstraintConfig(horizon=config.horizon)).accuracy
        history.append(entry)
        log.info("epoch %d: %s", epoch, entry)
        if callback is not None:
            callback(entry)
    return TrainResult(current, history, config)


def evaluate(
    model: NetworkModel,
    dataset,
    cfg: Optional[ConstraintConfig] = None,
    enc: Optional[EncoderConfig] = None,
    batch_size: int = 500,
    workers: int = 1,
) -> EvalReport:
    """Inference over a dataset under ``cfg`` (all constraints off = ideal)."""
    cfg = cfg or ConstraintConfig()
    tau = enc.tau if enc is not None else model.tau
    x_all = np.asarray(dataset.images)
    y_all = np.asarray(dataset.labels, dtype=np.int64)
    starts = list(range(0, len(y_all), batch_size))

    def job(start):
        return run_batch(model, x_all[start : start + batch_size], cfg, tau=tau, sample_offset=start)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(job, starts))
    else:
        outs = [job(s) for s in starts]

    labels = np.concatenate([o.labels for o in outs]) if outs else np.zeros(0, dtype=np.int64)
    no_spike = np.concatenate([o.no_spike for o in outs]) if outs else np.zeros(0, dtype=bool)
    ties = np.concatenate([o.ties for o in outs]) if outs else np.zeros(0, dtype=bool)
    earliest = np.concatenate([o.earliest for o in outs]) if outs else np.zeros(0)
    n_classes = model.layer_sizes[-1]
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_all, labels), 1)
    n = len(y_all)
    spiking = ~no_spike
    mean_t = float(earliest[spiking].mean()) if spiking.any() else float("nan")
    mean_tick = None
    if outs and outs[0].earliest_tick is not None:
        ticks = np.concatenate([o.earliest_tick for o in outs])
        mean_tick = float(ticks[spiking].mean()) if spiking.any() else float("nan")
    return EvalReport(
        accuracy=float(np.mean(labels == y_all)) if n else float("nan"),
        mean_earliest_output_time=mean_t,
        no_spike_rate=float(no_spike.mean()) if n else 0.0,
        tie_rate=float(ties.mean()) if n else 0.0,
        confusion=confusion,
        n_samples=n,
        mean_earliest_output_tick=mean_tick,
    )
