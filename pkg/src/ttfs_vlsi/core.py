"""Domain types shared by the simulator, trainer and circuit mapping.

Time is measured in milliseconds on the model side, potentials and the model
threshold are dimensionless, so a synaptic weight is a potential slope per
millisecond.  Circuit-side quantities are in SI units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "NetworkModel",
    "ConstraintConfig",
    "CircuitParams",
    "LayerActivity",
    "PotentialStats",
    "validate_config",
    "init_network",
    "quantize_levels",
]

DEFAULT_V_TH = 1.0
DEFAULT_TAU = 5.0
DEFAULT_HORIZON = 15.0


class ConfigError(ValueError):
    """Raised when a model or constraint configuration violates an invariant."""


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Fully connected feed-forward TTFS network.

    ``weights[l]`` has shape ``(layer_sizes[l + 1], layer_sizes[l])``.
    """

    layer_sizes: tuple
    weights: tuple
    v_th_model: float = DEFAULT_V_TH
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        for w in weights:
            w.setflags(write=False)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "v_th_model", float(self.v_th_model))
        object.__setattr__(self, "tau", float(self.tau))
        _check_model(self)

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes)

    def with_weights(self, weights) -> "NetworkModel":
        return NetworkModel(self.layer_sizes, tuple(weights), self.v_th_model, self.tau)

    def __eq__(self, other):
        if not isinstance(other, NetworkModel):
            return NotImplemented
        return (
            self.layer_sizes == other.layer_sizes
            and self.v_th_model == other.v_th_model
            and self.tau == other.tau
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
        )


def _check_model(model: NetworkModel) -> None:
    sizes = model.layer_sizes
    if len(sizes) < 2:
        raise ConfigError("layer_sizes needs at least an input and an output layer")
    if any(n <= 0 for n in sizes):
        raise ConfigError(f"layer sizes must be positive, got {list(sizes)}")
    if len(model.weights) != len(sizes) - 1:
        raise ConfigError(
            f"expected {len(sizes) - 1} weight matrices, got {len(model.weights)}"
        )
    for l, w in enumerate(model.weights, start=1):
        expected = (sizes[l], sizes[l - 1])
        if w.shape != expected:
            raise ConfigError(f"weight matrix of layer {l} has shape {w.shape}, expected {expected}")
        if not np.all(np.isfinite(w)):
            raise ConfigError(f"weight matrix of layer {l} contains non-finite values")
    if not (model.v_th_model > 0 and math.isfinite(model.v_th_model)):
        raise ConfigError("v_th_model must be positive")
    if not (model.tau > 0 and math.isfinite(model.tau)):
        raise ConfigError("tau must be positive")


@dataclass(frozen=True)
class ConstraintConfig:
    """Inference-time circuit constraints.

    ``discretize`` holds one flag per layer, input layer included; ``clamp``
    holds one flag per non-input layer.  Leaving either as ``None`` applies the
    constraint to every layer whenever its parameter is set.  ``None`` for
    ``t_clock_model``, ``w_min`` or ``v_min`` disables that constraint.
    """

    t_clock_model: Optional[float] = None
    discretize: Optional[tuple] = None
    w_min: Optional[float] = None
    v_min: Optional[float] = None
    clamp: Optional[tuple] = None
    sigma_vth: float = 0.0
    horizon: float = DEFAULT_HORIZON
    seed: int = 0

    def __post_init__(self):
        if self.discretize is not None:
            object.__setattr__(self, "discretize", tuple(bool(f) for f in self.discretize))
        if self.clamp is not None:
            object.__setattr__(self, "clamp", tuple(bool(f) for f in self.clamp))

    def discretize_flags(self, n_layers: int) -> tuple:
        if self.discretize is not None:
            return self.discretize
        return (self.t_clock_model is not None,) * n_layers

    def clamp_flags(self, n_layers: int) -> tuple:
        if self.clamp is not None:
            return self.clamp
        return (self.v_min is not None,) * (n_layers - 1)

    @property
    def is_ideal(self) -> bool:
        return (
            self.t_clock_model is None
            and self.w_min is None
            and self.v_min is None
            and self.sigma_vth == 0.0
        )


@dataclass(frozen=True)
class CircuitParams:
    """Capacitor-integrator neuron circuit constants (SI units)."""

    capacitance: float = 100e-15
    i_min: float = 1e-9
    v_th_circuit: float = 1.0
    t_clock_circuit: float = 1e-6

    def __post_init__(self):
        for name in ("capacitance", "i_min", "v_th_circuit", "t_clock_circuit"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive and finite, got {value!r}")


@dataclass
class LayerActivity:
    """Spikes emitted by one layer for one sample.

    A neuron that never fires has spike time ``inf`` and tick index ``-1``.
    ``causal_sets[i]`` lists the presynaptic indices that arrived strictly
    before neuron ``i`` fired (``None`` for silent neurons).
    """

    spike_times: np.ndarray
    tick_indices: Optional[np.ndarray] = None
    causal_sets: Optional[list] = None
    final_potentials: Optional[np.ndarray] = None
    traces: Optional[list] = None

    @property
    def fired(self) -> np.ndarray:
        return np.isfinite(self.spike_times)

    def __len__(self):
        return len(self.spike_times)


@dataclass
class PotentialStats:
    """Per-sample minima of output-layer potentials.

    ``v_min_overall[s]`` is the lowest potential any output neuron reaches
    before its own spike; ``v_min_pre_earliest[s]`` only looks before the
    earliest output spike of the sample.
    """

    v_min_overall: np.ndarray
    v_min_pre_earliest: np.ndarray
    bins: np.ndarray = field(default_factory=lambda: np.array([]))
    hist_overall: np.ndarray = field(default_factory=lambda: np.array([]))
    hist_pre_earliest: np.ndarray = field(default_factory=lambda: np.array([]))

    def fraction_above(self, level: float, which: str = "pre_earliest") -> float:
        values = self.v_min_pre_earliest if which == "pre_earliest" else self.v_min_overall
        return float(np.mean(values > level))


def validate_config(model: NetworkModel, cfg: ConstraintConfig) -> None:
    """Raise :class:`ConfigError` naming the first violated invariant."""
    _check_model(model)
    n_layers = model.n_layers

    if not (isinstance(cfg.horizon, (int, float)) and cfg.horizon > 0 and math.isfinite(cfg.horizon)):
        raise ConfigError(f"horizon must be positive, got {cfg.horizon!r}")
    if cfg.horizon < model.tau:
        raise ConfigError(f"horizon ({cfg.horizon}) must be at least tau ({model.tau})")
    if cfg.t_clock_model is not None and not (cfg.t_clock_model > 0 and math.isfinite(cfg.t_clock_model)):
        raise ConfigError(f"t_clock_model must be positive, got {cfg.t_clock_model!r}")
    if cfg.w_min is not None and not (cfg.w_min > 0 and math.isfinite(cfg.w_min)):
        raise ConfigError(f"w_min must be positive, got {cfg.w_min!r}")
    if cfg.v_min is not None:
        if not math.isfinite(cfg.v_min):
            raise ConfigError("v_min must be finite (use None to disable the floor)")
        if cfg.v_min >= model.v_th_model:
            raise ConfigError("v_min must be below threshold")
    if not (cfg.sigma_vth >= 0 and math.isfinite(cfg.sigma_vth)):
        raise ConfigError(f"sigma_vth must be non-negative, got {cfg.sigma_vth!r}")

    disc = cfg.discretize_flags(n_layers)
    if len(disc) != n_layers:
        raise ConfigError(f"discretize needs {n_layers} flags (one per layer), got {len(disc)}")
    if any(disc) and cfg.t_clock_model is None:
        raise ConfigError("discretization requested but t_clock_model is not set")
    clamp = cfg.clamp_flags(n_layers)
    if len(clamp) != n_layers - 1:
        raise ConfigError(f"clamp needs {n_layers - 1} flags (one per non-input layer), got {len(clamp)}")
    if any(clamp) and cfg.v_min is None:
        raise ConfigError("membrane clamping requested but v_min is not set")
    if not (0 <= int(cfg.seed) < 2**64):
        raise ConfigError("seed must fit in 64 bits")


def init_network(
    layer_sizes: Sequence[int],
    tau: float = DEFAULT_TAU,
    v_th_model: float = DEFAULT_V_TH,
    seed: int = 0,
) -> NetworkModel:
    """Draw Gaussian weights whose mean makes the expected slope ``2 v_th / tau``.

    With fan-in ``n`` the mean is ``2 v_th / (n tau)`` and the standard
    deviation ``1 / sqrt(n)``, so a neuron receiving all of its inputs is
    expected to reach threshold before ``tau`` has elapsed.
    """
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or any(n <= 0 for n in sizes):
        raise ConfigError(f"need at least two positive layer sizes, got {list(layer_sizes)}")
    if not (tau > 0 and v_th_model > 0):
        raise ConfigError("tau and v_th_model must be positive")
    rng = np.random.default_rng(seed)
    weights = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        mean = 2.0 * v_th_model / (n_in * tau)
        weights.append(rng.normal(mean, 1.0 / math.sqrt(n_in), size=(n_out, n_in)))
    return NetworkModel(tuple(sizes), tuple(weights), v_th_model, tau)


def quantize_levels(w: np.ndarray, w_min: float) -> np.ndarray:
    """Integer levels ``round(w / w_min)`` with ties rounded away from zero."""
    if not w_min > 0:
        raise ConfigError(f"w_min must be positive, got {w_min!r}")
    scaled = np.asarray(w, dtype=np.float64) / w_min
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int64)
