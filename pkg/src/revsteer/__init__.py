"""Steering control-affine stochastic systems by time reversal of diffusions."""
from .dynamics import ControlAffineSystem, builtin_system, linear_system, register_system, registered_systems
from .errors import (
    InvalidArgumentError,
    NotFoundError,
    NumericalOverflowError,
    OutOfRangeError,
    RevsteerError,
    SingularityError,
    TrainingDivergenceError,
)
from .lingauss import LinearSystem, predicted_terminal_error, reverse_moments
from .sde_sim import NoiseSource, TimeGrid, TrajectoryBatch, simulate_auxiliary, simulate_controlled
from .synthesis import (
    DeterministicInput,
    SynthesizedController,
    load_bundle,
    make_exact_linear_controller,
    save_bundle,
    synthesize,
)

__version__ = "0.1.0"
