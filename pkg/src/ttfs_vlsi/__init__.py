"""Time-to-first-spike networks under mixed-signal circuit constraints."""

from .core import (
    CircuitParams,
    ConfigError,
    ConstraintConfig,
    LayerActivity,
    NetworkModel,
    PotentialStats,
    init_network,
    validate_config,
)
from .simulator import (
    EncoderConfig,
    SimulationResult,
    encode_input,
    forward_layer_constrained,
    forward_layer_ideal,
    potential_stats,
    predict,
    run_batch,
    run_network,
)

__version__ = "0.1.0"
