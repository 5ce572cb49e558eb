"""
How each circuit constraint moves accuracy
==========================================

Loads the network written by ``train_digits.py`` and applies one constraint
at a time: weight quantization, threshold noise, a membrane floor and clock
discretization restricted to single layers.
"""

import numpy as np

from ttfs_vlsi import ConstraintConfig, run_network
from ttfs_vlsi.dataio import digits_dataset, load_model
from ttfs_vlsi.simulator import potential_stats
from ttfs_vlsi.trainer import evaluate

model = load_model("digits_model.json").model
_, test = digits_dataset(seed=0)
baseline = evaluate(model, test).accuracy
print(f"ideal accuracy {baseline:.4f}")

# Quantization: the step is a fraction of the largest weight magnitude.
w_max = max(float(np.abs(w).max()) for w in model.weights)
for levels in (4, 8, 32, 64):
    acc = evaluate(model, test, ConstraintConfig(w_min=w_max / levels)).accuracy
    print(f"{levels:3d} levels       accuracy {acc:.4f}  drop {baseline - acc:+.4f}")

# Threshold noise, redrawn at every tick of a fine clock.
for sigma in (0.02, 0.04, 0.1):
    cfg = ConstraintConfig(t_clock_model=0.05, sigma_vth=sigma, seed=1)
    print(f"sigma_vth {sigma:.2f}   accuracy {evaluate(model, test, cfg).accuracy:.4f}")

# Membrane floor on every layer versus hidden layer only.
for v_min in (-2.0, -1.0, -0.5):
    everywhere = evaluate(model, test, ConstraintConfig(v_min=v_min)).accuracy
    hidden = evaluate(model, test, ConstraintConfig(v_min=v_min, clamp=(True, False))).accuracy
    print(f"V_min {v_min:+.1f}      all layers {everywhere:.4f}  hidden only {hidden:.4f}")

# Losing output neurons keep sinking, but the decision is made at the first
# output spike; before then potentials stay much closer to zero.
results = [run_network(model, x / 255.0, record_traces=True) for x in test.images[:200]]
stats = potential_stats(results)
print(f"median output minimum: overall {np.median(stats.v_min_overall):.2f}, "
      f"before first spike {np.median(stats.v_min_pre_earliest):.2f}")
print(f"fraction above -0.5 before first spike: {stats.fraction_above(-0.5, 'pre_earliest'):.3f}")

# A coarse clock on one layer at a time.
for name, flags in (("input", (True, False, False)), ("hidden", (False, True, False)), ("output", (False, False, True))):
    cfg = ConstraintConfig(t_clock_model=1.0, discretize=flags)
    print(f"T = 1.0 ms on {name:6s} accuracy {evaluate(model, test, cfg).accuracy:.4f}")
