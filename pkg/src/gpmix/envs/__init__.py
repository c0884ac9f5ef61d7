"""Self-contained nonstationary environments."""

from gpmix.envs.cartpole import (
    CartpoleParams,
    CartpoleState,
    DynamicsSchedule,
    SimulationError,
    cartpole_step,
    default_dynamics,
    mechanical_energy,
    reward,
    run_schedule,
)
from gpmix.envs.synthetic import SyntheticStreamConfig, synthetic_stream

__all__ = [
    "CartpoleParams",
    "CartpoleState",
    "DynamicsSchedule",
    "SimulationError",
    "SyntheticStreamConfig",
    "cartpole_step",
    "default_dynamics",
    "mechanical_energy",
    "reward",
    "run_schedule",
    "synthetic_stream",
]
