"""Neural processes with a continuous-depth (neural ODE) decoder, in numpy."""

from .decoders import OdeSolverConfig, count_parameters
from .model import ModelConfig, NpOdeModel
from .predictive import PredictiveDistribution
from .training import ModelCheckpoint, TrainConfig, predict, train

__version__ = "0.1.0"

__all__ = [
    "ModelCheckpoint",
    "ModelConfig",
    "NpOdeModel",
    "OdeSolverConfig",
    "PredictiveDistribution",
    "TrainConfig",
    "count_parameters",
    "predict",
    "train",
]
