"""Online model-based RL with a growing mixture of GP dynamics experts."""

from gpmix.gp import (
    Dataset,
    ExperienceTuple,
    GaussianPrediction,
    GPPredictor,
    KernelParams,
    NumericalDegeneracyError,
    PosteriorCache,
)

__all__ = [
    "Dataset",
    "ExperienceTuple",
    "GaussianPrediction",
    "GPPredictor",
    "KernelParams",
    "NumericalDegeneracyError",
    "PosteriorCache",
]

__version__ = "0.1.0"
