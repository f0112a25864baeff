"""Propagation, sampling and fitting of nonlinear multivariate Gaussian-Markovian
systems in their Langevin, Fokker-Planck and path-integral forms."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, NumericalError, PathfoldError)
from .model import Distribution, ModelSpec, StateMesh, TimeSeries, load_model, load_model_file

__all__ = [
    "ConfigError", "ConvergenceError", "Distribution", "ModelSpec", "NumericalError",
    "PathfoldError", "StateMesh", "TimeSeries", "__version__", "load_model", "load_model_file",
]
