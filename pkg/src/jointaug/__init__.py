"""Joint estimation of multiple graphical models by noise-augmented GLM fits."""

from .core import (DataValidationError, JointEstimate, MultiGraphDataset, NoiseSpec,
                   ParameterState, load_dataset, standardize, validate)
from .estimators import EstimatorConfig, run, run_cd, run_ns, run_scio

__all__ = [
    "DataValidationError", "JointEstimate", "MultiGraphDataset", "NoiseSpec", "ParameterState",
    "load_dataset", "standardize", "validate", "EstimatorConfig", "run", "run_cd", "run_ns",
    "run_scio",
]
__version__ = "0.1.0"
