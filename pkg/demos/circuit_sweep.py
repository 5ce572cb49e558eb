"""
Choosing a clock for the circuit
================================

Each model clock period fixes the weight resolution through the circuit's
capacitance, minimum current and clock.  Sweeping the period trades accuracy
for coarser, cheaper hardware; the operating point is the largest period
that still meets an accuracy floor.
"""

import numpy as np

from ttfs_vlsi import CircuitParams
from ttfs_vlsi.circuitmap import derive_wmin, quantize_weights, simulate_circuit_network, sweep_and_select
from ttfs_vlsi.dataio import digits_dataset, load_model
from ttfs_vlsi.simulator import encode_batch

model = load_model("digits_model.json").model
_, test = digits_dataset(seed=0)
circuit = CircuitParams()
print("circuit:", circuit)

# A longer model period means more charge per tick, so one current level is
# a larger slope in model units.
for t in (0.1, 0.5, 1.0):
    w_min = derive_wmin(circuit, t, model.v_th_model)
    print(f"T = {t:.1f} ms  w_min = {w_min:.4f}  levels per layer {quantize_weights(model, w_min).level_counts}")

grid = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0, 1.5, 2.0]
floor = 0.9
rows, op = sweep_and_select(model, test, circuit, grid, floor, workers=4)
for r in rows:
    print(f"T = {r.t_model_ms:.1f} ms  accuracy {r.accuracy:.4f}  "
          f"first output spike {r.mean_spike_time_circuit_us:.1f} us on chip")
print(f"operating point at floor {floor}: T = {op.t_model_ms} ms, accuracy {op.accuracy:.4f}")

# The integer-current circuit engine gives the same ticks as the model-side
# constrained simulation at the chosen point.
qnet = quantize_weights(model, derive_wmin(circuit, op.t_model_ms, model.v_th_model))
t_in = encode_batch(test.images[:1] / 255.0, model.tau)[0]
in_ticks = np.where(np.isfinite(t_in), np.rint(t_in / op.t_model_ms), -1).astype(int)
layers = simulate_circuit_network(qnet, circuit, in_ticks, 10_000)
print("output ticks on chip:", layers[-1].tick_indices)
print("predicted digit:", int(np.argmin(np.where(layers[-1].tick_indices < 0, 10**9, layers[-1].tick_indices))),
      "label:", int(test.labels[0]))
