"""Mapping trained networks onto a clocked capacitor-integrator circuit.

The circuit neuron integrates ``C dv/dt = I_min * sum_j I_ij * step(t - t_j)``
and is compared with ``V_th_circuit`` once per ``T_clock_circuit``.  Setting
``I_ij`` to the quantized weight level makes it tick-for-tick equivalent to
the model neuron whenever

    T_clock_model * w_min = T_clock_circuit * I_min * V_th_model / (C * V_th_circuit)

so choosing the model clock fixes the weight resolution.  Coarser clocks
give finer weights and fewer ticks to the first output spike, at the price
of timing resolution.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import CircuitParams, ConfigError, ConstraintConfig, LayerActivity, NetworkModel, quantize_levels
from .trainer import evaluate

__all__ = [
    "QuantizedNetwork",
    "SweepRow",
    "OperatingPoint",
    "InfeasibleError",
    "quantize_weights",
    "derive_wmin",
    "simulate_circuit_network",
    "sweep_and_select",
    "select_operating_point",
    "SWEEP_COLUMNS",
]

MS = 1e-3

SWEEP_COLUMNS = (
    "t_model_ms",
    "w_min",
    "levels",
    "accuracy",
    "mean_spike_time_model_ms",
    "mean_spike_time_circuit_us",
    "no_spike_rate",
)

VARIANTS = {
    "i": (True, True),
    "ii": (True, False),
    "iii": (False, True),
}


class InfeasibleError(RuntimeError):
    def __init__(self, floor: float, best_accuracy: float, best_t_model: Optional[float]):
        super().__init__(
            f"infeasible: no clock period reaches accuracy {floor:.4f} "
            f"(best {best_accuracy:.4f} at t_model={best_t_model} ms)"
        )
        self.floor = floor
        self.best_accuracy = best_accuracy
        self.best_t_model = best_t_model


@dataclass(frozen=True)
class QuantizedNetwork:
    levels: tuple
    w_min: float
    v_th_model: float
    tau: float

    @property
    def level_counts(self) -> list:
        """Per-layer ``max |level|``."""
        return [int(np.abs(lv).max()) if lv.size else 0 for lv in self.levels]

    @property
    def weights(self) -> tuple:
        return tuple(self.w_min * lv for lv in self.levels)

    def to_model(self) -> NetworkModel:
        sizes = (self.levels[0].shape[1],) + tuple(lv.shape[0] for lv in self.levels)
        return NetworkModel(sizes, self.weights, self.v_th_model, self.tau)


@dataclass
class SweepRow:
    t_model_ms: float
    w_min: float
    levels: list
    accuracy: float
    mean_spike_time_model_ms: float
    mean_spike_time_circuit_us: Optional[float]
    no_spike_rate: float
    mean_tick: Optional[float] = None
    variant: str = "i"

    def as_dict(self) -> dict:
        return {
            "t_model_ms": self.t_model_ms,
            "w_min": self.w_min,
            "levels": list(self.levels),
            "accuracy": self.accuracy,
            "mean_spike_time_model_ms": self.mean_spike_time_model_ms,
            "mean_spike_time_circuit_us": self.mean_spike_time_circuit_us,
            "no_spike_rate": self.no_spike_rate,
        }


@dataclass
class OperatingPoint:
    t_model_ms: float
    accuracy: float
    floor: float
    w_min: Optional[float] = None

    def as_dict(self) -> dict:
        return {"t_model_ms": self.t_model_ms, "accuracy": self.accuracy, "floor": self.floor}


def quantize_weights(model: NetworkModel, w_min: float) -> QuantizedNetwork:
    """Round every weight to the nearest multiple of ``w_min`` (half away from zero)."""
    if not (w_min is not None and w_min > 0):
        raise ConfigError(f"w_min must be positive, got {w_min!r}")
    levels = tuple(quantize_levels(w, w_min) for w in model.weights)
    return QuantizedNetwork(levels, float(w_min), model.v_th_model, model.tau)


def derive_wmin(circuit: CircuitParams, t_clock_model: float, v_th_model: float) -> float:
    """Weight resolution (per ms) that makes model and circuit tick-equivalent.

    ``t_clock_model`` is in ms.  The per-tick potential increment of one
    weight level, ``w_min * t_clock_model``, equals the circuit's relative
    voltage step ``T_clock_circuit * I_min / (C * V_th_circuit)`` scaled by
    the model threshold.
    """
    if not (t_clock_model > 0 and v_th_model > 0):
        raise ConfigError("t_clock_model and v_th_model must be positive")
    step = circuit.t_clock_circuit * circuit.i_min * v_th_model / (circuit.capacitance * circuit.v_th_circuit)
    return step / t_clock_model


def _circuit_layer(levels: np.ndarray, in_ticks: np.ndarray, circuit: CircuitParams, horizon_ticks: int):
    n_out = levels.shape[0]
    n_steps = horizon_ticks + 1
    arrivals = np.zeros((n_steps, levels.shape[1]), dtype=np.int64)
    fired_in = (in_ticks >= 0) & (in_ticks <= horizon_ticks)
    arrivals[in_ticks[fired_in], np.flatnonzero(fired_in)] = 1
    active = np.cumsum(arrivals, axis=0)
    # integer level sums are exact; current in amperes per tick interval
    current = circuit.i_min * (active @ levels.T.astype(np.int64))
    dv = current * (circuit.t_clock_circuit / circuit.capacitance)
    volts = np.vstack([np.zeros((1, n_out)), np.cumsum(dv, axis=0)[:-1]])
    above = volts >= circuit.v_th_circuit
    ticks = np.where(above.any(axis=0), np.argmax(above, axis=0), -1)
    rel = np.abs(volts - circuit.v_th_circuit) / circuit.v_th_circuit
    limit = np.where(ticks >= 0, ticks, horizon_ticks)
    mask = np.arange(n_steps)[:, None] <= limit[None, :]
    margin = float(rel[mask].min()) if mask.any() else np.inf
    final = volts[-1]
    return ticks.astype(np.int64), volts, final, margin


def simulate_circuit_network(
    qnet: QuantizedNetwork,
    circuit: CircuitParams,
    input_ticks,
    horizon_ticks: int,
    return_margin: bool = False,
):
    """Tick-level circuit simulation in physical units.

    ``input_ticks`` holds one tick index per input neuron (``-1`` for no
    spike).  Returns one :class:`LayerActivity` per layer with spike times in
    seconds; ``final_potentials`` are in volts.  With ``return_margin`` the
    smallest relative distance ``|v - V_th| / V_th`` seen at any compared
    tick is returned as well, which flags floating-point threshold ties.
    """
    ticks = np.asarray(input_ticks, dtype=np.int64)
    layers = [
        LayerActivity(
            spike_times=np.where(ticks >= 0, ticks * circuit.t_clock_circuit, np.inf),
            tick_indices=ticks,
        )
    ]
    margin = np.inf
    for lv in qnet.levels:
        ticks, _, final, m = _circuit_layer(np.asarray(lv), ticks, circuit, int(horizon_ticks))
        margin = min(margin, m)
        layers.append(
            LayerActivity(
                spike_times=np.where(ticks >= 0, ticks * circuit.t_clock_circuit, np.inf),
                tick_indices=ticks,
                final_potentials=final,
            )
        )
    return (layers, margin) if return_margin else layers


def select_operating_point(rows: Sequence[SweepRow], floor: float) -> OperatingPoint:
    """Largest model clock period whose accuracy meets ``floor``."""
    if not rows:
        raise ConfigError("empty sweep")
    feasible = [r for r in rows if r.accuracy >= floor]
    if not feasible:
        best = max(rows, key=lambda r: r.accuracy)
        raise InfeasibleError(floor, best.accuracy, best.t_model_ms)
    chosen = max(feasible, key=lambda r: r.t_model_ms)
    return OperatingPoint(chosen.t_model_ms, chosen.accuracy, floor, chosen.w_min)


def sweep_and_select(
    model: NetworkModel,
    dataset,
    circuit: CircuitParams,
    t_model_grid: Sequence[float],
    accuracy_floor: float,
    template: Optional[ConstraintConfig] = None,
    variant: str = "i",
    workers: int = 1,
):
    """Evaluate each model clock period with its circuit-matched weight resolution.

    ``variant`` picks the constraint set: ``"i"`` discretization and
    quantization, ``"ii"`` discretization only, ``"iii"`` quantization only.
    Membrane floor and threshold noise come from ``template`` (off by
    default).  Rows come back in grid order.
    """
    grid = [float(t) for t in t_model_grid]
    if not grid:
        raise ConfigError("t_model_grid is empty")
    if any(t <= 0 for t in grid):
        raise ConfigError("clock periods must be positive")
    if not accuracy_floor > 0:
        raise ConfigError("accuracy_floor must be positive")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    discretize, quantize = VARIANTS[variant]
    template = template or ConstraintConfig()

    def job(t_model):
        w_min = derive_wmin(circuit, t_model, model.v_th_model)
        qnet = quantize_weights(model, w_min)
        cfg = replace(
            template,
            t_clock_model=t_model if discretize else None,
            discretize=None,
            w_min=w_min if quantize else None,
        )
        report = evaluate(model, dataset, cfg)
        mean_tick = report.mean_earliest_output_tick if discretize else None
        return SweepRow(
            t_model_ms=t_model,
            w_min=w_min,
            levels=qnet.level_counts,
            accuracy=report.accuracy,
            mean_spike_time_model_ms=report.mean_earliest_output_time,
            mean_spike_time_circuit_us=None if mean_tick is None else mean_tick * circuit.t_clock_circuit * 1e6,
            no_spike_rate=report.no_spike_rate,
            mean_tick=mean_tick,
            variant=variant,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, grid))
    else:
        rows = [job(t) for t in grid]
    return rows, select_operating_point(rows, accuracy_floor)
