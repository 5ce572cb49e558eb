"""Forward simulation of TTFS networks, ideal and under circuit constraints.

The neuron integrates ``dv/dt = sum_j w_ij * step(t - t_j)`` from ``v(0) = 0``
and fires once, at the first time its potential reaches threshold.  Between
presynaptic spikes the potential is linear, so both engines are exact event
integrators; the constrained engine additionally samples the potential on a
clock grid, clamps it from below and perturbs the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .core import (
    ConfigError,
    ConstraintConfig,
    LayerActivity,
    NetworkModel,
    PotentialStats,
    quantize_levels,
    validate_config,
)

__all__ = [
    "EncoderConfig",
    "SimulationResult",
    "BatchOutput",
    "encode_input",
    "encode_batch",
    "forward_layer_ideal",
    "forward_layer_constrained",
    "run_network",
    "run_batch",
    "predict",
    "potential_stats",
    "sample_seeds",
]


@dataclass(frozen=True)
class EncoderConfig:
    """Pixel-to-spike-time encoder; ``jitter_sigma`` is in ms."""

    tau: float = 5.0
    jitter_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.jitter_sigma >= 0:
            raise ConfigError("jitter_sigma must be non-negative")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")


@dataclass
class SimulationResult:
    layers: list
    predicted_label: int
    no_output_spike: bool
    earliest_output_time: Optional[float]
    earliest_output_tick: Optional[int] = None

    @property
    def output(self) -> LayerActivity:
        return self.layers[-1]


@dataclass
class BatchOutput:
    """Output-layer summary of a batch run (one row per sample)."""

    spike_times: np.ndarray
    tick_indices: Optional[np.ndarray]
    final_potentials: np.ndarray
    labels: np.ndarray
    no_spike: np.ndarray
    ties: np.ndarray
    earliest: np.ndarray
    earliest_tick: Optional[np.ndarray] = None
    hidden_fired_fraction: list = field(default_factory=list)


def _check_pixels(pixels) -> np.ndarray:
    x = np.asarray(pixels, dtype=np.float64)
    if x.size and (np.nanmin(x) < 0.0 or np.nanmax(x) > 1.0 or np.isnan(x).any()):
        raise ConfigError("pixel intensities must lie in [0, 1]")
    return x


def encode_batch(pixels, tau: float, jitter_sigma: float = 0.0, rng=None) -> np.ndarray:
    """Spike times ``tau * (1 - x)``; zero pixels never spike (``inf``)."""
    x = _check_pixels(pixels)
    t = tau * (1.0 - x)
    if jitter_sigma > 0.0:
        if rng is None:
            raise ConfigError("jitter requires an rng")
        t = np.maximum(t + rng.normal(0.0, jitter_sigma, size=t.shape), 0.0)
    t[x == 0.0] = np.inf
    return t


def encode_input(pixels, enc: EncoderConfig, jitter_on: bool = False, rng=None) -> LayerActivity:
    if jitter_on and enc.jitter_sigma > 0.0 and rng is None:
        rng = np.random.default_rng(enc.seed)
    sigma = enc.jitter_sigma if jitter_on else 0.0
    return LayerActivity(spike_times=encode_batch(pixels, enc.tau, sigma, rng))


def _discretize_inputs(times: np.ndarray, period: float):
    ticks = np.full(times.shape, _kernels.NO_SPIKE, dtype=np.int64)
    fired = np.isfinite(times)
    ticks[fired] = np.floor(times[fired] / period + 0.5).astype(np.int64)
    out = np.full(times.shape, np.inf)
    out[fired] = ticks[fired] * period
    return out, ticks


def _unpack_traces(tr_t, tr_v, tr_n, b):
    return [(tr_t[b, i, : tr_n[b, i]].copy(), tr_v[b, i, : tr_n[b, i]].copy()) for i in range(tr_n.shape[1])]


def _causal_sets(t_out_row, ncausal_row, order_row):
    return [
        order_row[: ncausal_row[i]].copy() if np.isfinite(t_out_row[i]) else None
        for i in range(len(t_out_row))
    ]


def _trace_cap(n_in: int, n_ticks: int) -> int:
    return 2 * (n_in + n_ticks) + 8


def _layer(weights, t_in, seeds, v_th, horizon, period, clamp, v_min, sigma, record):
    w = np.ascontiguousarray(weights, dtype=np.float64)
    t_in = np.ascontiguousarray(np.atleast_2d(t_in), dtype=np.float64)
    seeds = np.ascontiguousarray(seeds, dtype=np.uint32)
    n_ticks = _kernels.n_ticks_for(horizon, period) if period else 0
    cap = _trace_cap(w.shape[1], n_ticks)
    return _kernels.layer_forward(
        w,
        t_in,
        seeds,
        float(v_th),
        float(horizon),
        n_ticks,
        float(period or 0.0),
        bool(clamp),
        float(v_min) if v_min is not None else -np.inf,
        float(sigma),
        bool(record),
        cap,
    )


def forward_layer_ideal(weights, inputs: LayerActivity, v_th: float, horizon: float, record: bool = False) -> LayerActivity:
    """Exact continuous-time response of one layer."""
    t_out, _, nc, order, _, v_final, tr_t, tr_v, tr_n = _layer(
        weights, inputs.spike_times, np.zeros(1), v_th, horizon, None, False, None, 0.0, record
    )
    return LayerActivity(
        spike_times=t_out[0],
        causal_sets=_causal_sets(t_out[0], nc[0], order[0]),
        final_potentials=v_final[0],
        traces=_unpack_traces(tr_t, tr_v, tr_n, 0) if record else None,
    )


def forward_layer_constrained(
    weights,
    inputs: LayerActivity,
    cfg: ConstraintConfig,
    v_th: float,
    rng=None,
    discretize: Optional[bool] = None,
    clamp: Optional[bool] = None,
    record: bool = False,
) -> LayerActivity:
    """One layer with clocked firing, membrane floor and threshold noise.

    ``discretize`` and ``clamp`` default to "on whenever the corresponding
    parameter of ``cfg`` is set".  Threshold draws come from a stream seeded by
    ``rng`` (or ``cfg.seed`` when no rng is given).
    """
    if discretize is None:
        discretize = cfg.t_clock_model is not None
    if clamp is None:
        clamp = cfg.v_min is not None
    if discretize and cfg.t_clock_model is None:
        raise ConfigError("discretization requested but t_clock_model is not set")
    if clamp and cfg.v_min is None:
        raise ConfigError("membrane clamping requested but v_min is not set")
    if inputs.tick_indices is not None and cfg.t_clock_model is not None:
        ticks = inputs.tick_indices
        fired = ticks >= 0
        if not np.array_equal(inputs.spike_times[fired], ticks[fired] * cfg.t_clock_model) or np.isfinite(
            inputs.spike_times[~fired]
        ).any():
            raise ConfigError("input spikes are not on the clock grid")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    seed = np.array([rng.integers(0, 2**32)], dtype=np.uint32)
    period = cfg.t_clock_model if discretize else None
    t_out, ticks, nc, order, _, v_final, tr_t, tr_v, tr_n = _layer(
        weights, inputs.spike_times, seed, v_th, cfg.horizon, period, clamp, cfg.v_min, cfg.sigma_vth, record
    )
    return LayerActivity(
        spike_times=t_out[0],
        tick_indices=ticks[0] if discretize else None,
        causal_sets=None if discretize else _causal_sets(t_out[0], nc[0], order[0]),
        final_potentials=v_final[0],
        traces=_unpack_traces(tr_t, tr_v, tr_n, 0) if record else None,
    )


def sample_seeds(seed: int, sample_indices, layer: int) -> np.ndarray:
    """Per-sample, per-layer 32-bit seeds for threshold noise."""
    return np.array(
        [np.random.SeedSequence([int(seed), int(s), int(layer)]).generate_state(1)[0] for s in sample_indices],
        dtype=np.uint32,
    )


def _effective_weights(model: NetworkModel, cfg: ConstraintConfig):
    if cfg.w_min is None:
        return model.weights
    return tuple(cfg.w_min * quantize_levels(w, cfg.w_min) for w in model.weights)


def predict(output: LayerActivity, final_potentials=None):
    """Label of the earliest output spike; lowest index wins ties.

    Without any output spike the label falls back to the neuron with the
    highest final potential, and ``no_output_spike`` is True.
    """
    times = np.asarray(output.spike_times)
    if np.isfinite(times).any():
        return int(np.argmin(times)), False
    if final_potentials is None:
        final_potentials = output.final_potentials
    if final_potentials is None:
        return 0, True
    return int(np.argmax(final_potentials)), True


def run_network(
    model: NetworkModel,
    pixels,
    cfg: Optional[ConstraintConfig] = None,
    enc: Optional[EncoderConfig] = None,
    mode: str = "ideal",
    record_traces: bool = False,
    sample_index: int = 0,
) -> SimulationResult:
    """Simulate one sample through every layer."""
    if mode not in ("ideal", "constrained"):
        raise ConfigError(f"mode must be 'ideal' or 'constrained', got {mode!r}")
    cfg = cfg or ConstraintConfig()
    enc = enc or EncoderConfig(tau=model.tau)
    validate_config(model, cfg)
    if mode == "ideal":
        cfg = ConstraintConfig(horizon=cfg.horizon, seed=cfg.seed)

    n_layers = model.n_layers
    disc = cfg.discretize_flags(n_layers)
    clamp = cfg.clamp_flags(n_layers)
    period = cfg.t_clock_model

    t = encode_batch(pixels, enc.tau)
    ticks = None
    if disc[0]:
        t, ticks = _discretize_inputs(t, period)
    layers = [LayerActivity(spike_times=t, tick_indices=ticks)]
    t_in = t[None, :]
    for l, w in enumerate(_effective_weights(model, cfg), start=1):
        seeds = sample_seeds(cfg.seed, [sample_index], l)
        t_out, tk, nc, order, _, v_final, tr_t, tr_v, tr_n = _layer(
            w,
            t_in,
            seeds,
            model.v_th_model,
            cfg.horizon,
            period if disc[l] else None,
            clamp[l - 1],
            cfg.v_min,
            cfg.sigma_vth,
            record_traces,
        )
        layers.append(
            LayerActivity(
                spike_times=t_out[0],
                tick_indices=tk[0] if disc[l] else None,
                causal_sets=_causal_sets(t_out[0], nc[0], order[0]),
                final_potentials=v_final[0],
                traces=_unpack_traces(tr_t, tr_v, tr_n, 0) if record_traces else None,
            )
        )
        t_in = t_out

    out = layers[-1]
    label, no_spike = predict(out)
    earliest = None if no_spike else float(out.spike_times[label])
    earliest_tick = None
    if not no_spike and out.tick_indices is not None:
        earliest_tick = int(out.tick_indices[label])
    return SimulationResult(layers, label, no_spike, earliest, earliest_tick)


def run_batch(
    model: NetworkModel,
    pixels,
    cfg: Optional[ConstraintConfig] = None,
    tau: Optional[float] = None,
    sample_offset: int = 0,
    mode: str = "constrained",
) -> BatchOutput:
    """Vectorized inference over many samples (no traces, no jitter).

    Threshold-noise seeds depend on ``sample_offset + row``, so results do not
    depend on how a dataset is split into batches.
    """
    cfg = cfg or ConstraintConfig()
    validate_config(model, cfg)
    if mode == "ideal":
        cfg = ConstraintConfig(horizon=cfg.horizon, seed=cfg.seed)
    x = np.atleast_2d(np.asarray(pixels))
    if x.dtype == np.uint8:
        x = x / 255.0
    n_layers = model.n_layers
    disc = cfg.discretize_flags(n_layers)
    clamp = cfg.clamp_flags(n_layers)
    period = cfg.t_clock_model
    t = encode_batch(x, model.tau if tau is None else tau)
    if disc[0]:
        t, _ = _discretize_inputs(t, period)
    indices = np.arange(sample_offset, sample_offset + len(x))
    fired_frac = []
    tk = None
    for l, w in enumerate(_effective_weights(model, cfg), start=1):
        seeds = sample_seeds(cfg.seed, indices, l) if cfg.sigma_vth > 0 else np.zeros(len(x), dtype=np.uint32)
        t, tk, _, _, _, v_final, _, _, _ = _layer(
            w, t, seeds, model.v_th_model, cfg.horizon, period if disc[l] else None, clamp[l - 1], cfg.v_min, cfg.sigma_vth, False
        )
        if l < n_layers - 1:
            fired_frac.append(float(np.isfinite(t).mean()))
    fired_any = np.isfinite(t).any(axis=1)
    labels = np.where(fired_any, np.argmin(t, axis=1), np.argmax(v_final, axis=1))
    earliest = np.where(fired_any, t.min(axis=1), np.inf)
    ties = fired_any & ((t == earliest[:, None]).sum(axis=1) > 1)
    out_ticks = tk if disc[-1] else None
    earliest_tick = None
    if out_ticks is not None:
        earliest_tick = np.where(fired_any, out_ticks[np.arange(len(x)), labels], _kernels.NO_SPIKE)
    return BatchOutput(
        spike_times=t,
        tick_indices=out_ticks,
        final_potentials=v_final,
        labels=labels,
        no_spike=~fired_any,
        ties=ties,
        earliest=earliest,
        earliest_tick=earliest_tick,
        hidden_fired_fraction=fired_frac,
    )


def _minima(result: SimulationResult):
    out = result.output
    if out.traces is None:
        raise ConfigError("potential statistics need recorded traces")
    times = out.spike_times
    first = times.min() if np.isfinite(times).any() else np.inf
    own = np.inf
    pre = np.inf
    for i, (tt, vv) in enumerate(out.traces):
        if len(tt) == 0:
            continue
        before_own = vv[tt < times[i]]
        if before_own.size:
            own = min(own, before_own.min())
        before_first = vv[tt < first]
        if before_first.size:
            pre = min(pre, before_first.min())
        if np.isfinite(first) and tt[-1] >= first:
            pre = min(pre, float(np.interp(first, tt, vv)))
    return own, pre


def potential_stats(results: Sequence[SimulationResult], bins=50) -> PotentialStats:
    """Output-layer potential minima, overall and before the earliest spike.

    Traces should come from runs without a membrane floor.  Both minima are
    exact for piecewise-linear trajectories because every vertex is recorded.
    """
    if not results:
        raise ConfigError("no results given")
    pairs = np.array([_minima(r) for r in results], dtype=np.float64)
    overall, pre = pairs[:, 0], pairs[:, 1]
    if np.isscalar(bins):
        lo = min(overall.min(), pre.min())
        hi = max(overall.max(), pre.max())
        if hi <= lo:
            hi = lo + 1.0
        bins = np.linspace(lo, hi, int(bins) + 1)
    h_all, edges = np.histogram(overall, bins=bins)
    h_pre, _ = np.histogram(pre, bins=edges)
    return PotentialStats(overall, pre, edges, h_all, h_pre)
