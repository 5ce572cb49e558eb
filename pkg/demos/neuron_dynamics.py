"""
One neuron, four ways
=====================

A single non-leaky integrate-and-fire neuron driven by two inputs, simulated
exactly, on a clock grid, with a membrane floor, and with a noisy threshold.
"""

import numpy as np

from ttfs_vlsi import ConstraintConfig, LayerActivity, forward_layer_constrained, forward_layer_ideal

# An inhibitory input at t=0 and an excitatory one at t=2 ms.
w = np.array([[-1.0, 2.0]])
inputs = LayerActivity(spike_times=np.array([0.0, 2.0]))

# Exact event-driven solution: the potential falls to -2 by 2 ms, then rises
# with slope 1 and reaches threshold at 5 ms.
ideal = forward_layer_ideal(w, inputs, v_th=1.0, horizon=15.0, record=True)
print("ideal spike time      :", ideal.spike_times[0], "ms")
times, values = ideal.traces[0]
print("ideal trace vertices  :", list(zip(times.round(3), values.round(3))))

# A floor at -0.5 stops the descent at 0.5 ms, so the neuron fires earlier.
clamped = forward_layer_constrained(w, inputs, ConstraintConfig(v_min=-0.5), v_th=1.0)
print("with V_min = -0.5     :", clamped.spike_times[0], "ms")

# With a 0.4 ms clock the threshold is only compared at ticks; the spike
# lands on the first tick at or after the crossing.
grid = LayerActivity(spike_times=np.array([0.0, 2.0]), tick_indices=np.array([0, 5]))
clocked = forward_layer_constrained(w, grid, ConstraintConfig(t_clock_model=0.4), v_th=1.0)
print("clocked (T = 0.4 ms)  :", clocked.spike_times[0], "ms, tick", clocked.tick_indices[0])

# Threshold noise is redrawn at every tick; different seeds move the spike
# by a tick or so.
for seed in range(4):
    cfg = ConstraintConfig(t_clock_model=0.1, sigma_vth=0.2, seed=seed)
    ticks = LayerActivity(spike_times=np.array([0.0, 2.0]), tick_indices=np.array([0, 20]))
    noisy = forward_layer_constrained(w, ticks, cfg, v_th=1.0, rng=np.random.default_rng(seed))
    print(f"sigma_vth = 0.2, seed {seed}:", round(float(noisy.spike_times[0]), 3), "ms")
