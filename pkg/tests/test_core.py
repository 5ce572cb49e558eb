import numpy as np
import pytest

from ttfs_vlsi import (
    CircuitParams,
    ConfigError,
    ConstraintConfig,
    LayerActivity,
    NetworkModel,
    init_network,
    validate_config,
)
from ttfs_vlsi.core import quantize_levels


@pytest.fixture(scope="module")
def mnist_shaped():
    return init_network([784, 800, 10], seed=0)


def test_validate_accepts_two_ms_clock(mnist_shaped):
    validate_config(mnist_shaped, ConstraintConfig(t_clock_model=2.0))


def test_validate_rejects_vmin_at_threshold(mnist_shaped):
    with pytest.raises(ConfigError, match="v_min must be below threshold"):
        validate_config(mnist_shaped, ConstraintConfig(v_min=mnist_shaped.v_th_model))


def test_validate_rejects_zero_horizon(mnist_shaped):
    with pytest.raises(ConfigError, match="horizon"):
        validate_config(mnist_shaped, ConstraintConfig(horizon=0.0))


@pytest.mark.parametrize(
    "cfg",
    [
        ConstraintConfig(horizon=4.0),
        ConstraintConfig(sigma_vth=-0.1),
        ConstraintConfig(discretize=(True, True, True)),
        ConstraintConfig(t_clock_model=1.0, discretize=(True, False)),
        ConstraintConfig(v_min=-1.0, clamp=(True,)),
        ConstraintConfig(clamp=(True, True)),
        ConstraintConfig(w_min=0.0),
        ConstraintConfig(t_clock_model=-1.0),
    ],
)
def test_validate_rejects_inconsistent(mnist_shaped, cfg):
    with pytest.raises(ConfigError):
        validate_config(mnist_shaped, cfg)


def test_init_is_deterministic():
    a = init_network([20, 7, 3], seed=11)
    b = init_network([20, 7, 3], seed=11)
    c = init_network([20, 7, 3], seed=12)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert a == b
    assert a != c


def test_init_mean_matches_fan_in_rule():
    # fan-in 100, tau 5, v_th 1: mean 0.004, std 0.1
    model = init_network([100, 1000], tau=5.0, v_th_model=1.0, seed=3)
    w = model.weights[0]
    assert w.size == 10**5
    se = 0.1 / np.sqrt(w.size)
    assert abs(w.mean() - 0.004) < 3 * se
    assert w.std() == pytest.approx(0.1, rel=0.02)


@pytest.mark.parametrize("sizes", [[10], [], [3, 0, 2], [4, -1]])
def test_init_rejects_bad_sizes(sizes):
    with pytest.raises(ConfigError):
        init_network(sizes)


def test_model_invariants():
    w = np.ones((2, 3))
    NetworkModel((3, 2), (w,))
    with pytest.raises(ConfigError):
        NetworkModel((3, 2), (np.ones((3, 2)),))
    with pytest.raises(ConfigError):
        NetworkModel((3, 2), (np.full((2, 3), np.nan),))
    with pytest.raises(ConfigError):
        NetworkModel((3, 2), (w,), v_th_model=0.0)
    with pytest.raises(ConfigError):
        NetworkModel((3, 2), (w,), tau=-1.0)


def test_model_weights_are_read_only():
    m = init_network([4, 3], seed=0)
    with pytest.raises(ValueError):
        m.weights[0][0, 0] = 1.0


def test_circuit_params_positive():
    CircuitParams()
    with pytest.raises(ConfigError):
        CircuitParams(capacitance=0.0)
    with pytest.raises(ConfigError):
        CircuitParams(i_min=float("inf"))


def test_default_flags_follow_parameters():
    cfg = ConstraintConfig(t_clock_model=1.0, v_min=-1.0)
    assert cfg.discretize_flags(3) == (True, True, True)
    assert cfg.clamp_flags(3) == (True, True)
    ideal = ConstraintConfig()
    assert ideal.is_ideal
    assert ideal.discretize_flags(3) == (False, False, False)


def test_layer_activity_fired():
    act = LayerActivity(spike_times=np.array([0.5, np.inf, 2.0]))
    assert act.fired.tolist() == [True, False, True]


def test_quantize_rounds_half_away_from_zero():
    # exact binary halves, so the tie really is a tie
    w = np.array([0.375, -0.375, 0.625, -0.625, 0.37, -0.049, 0.0])
    assert quantize_levels(w, 0.25).tolist() == [2, -2, 3, -3, 1, 0, 0]
    assert quantize_levels(np.array([0.37, -0.049]), 0.1).tolist() == [4, 0]


def test_fresh_hidden_neurons_mostly_fire():
    model = init_network([784, 800, 10], seed=0)
    x = np.random.default_rng(1).uniform(0.0, 1.0, size=(20, 784))
    from ttfs_vlsi import run_batch

    out = run_batch(model, x, ConstraintConfig(), mode="ideal")
    assert out.hidden_fired_fraction[0] >= 0.95
