"""Gaussian belief propagation through two-mode nonsmooth ODEs, with a
sampling oracle and chance-constrained stochastic optimal control on top."""

__version__ = "0.1.0"

from .systems import GaussianBelief, PiecewiseAffineSystem, PiecewiseConstant1D, PiecewiseSmoothModel
from .models import builtin_model, model_names

__all__ = [
    "__version__",
    "GaussianBelief",
    "PiecewiseAffineSystem",
    "PiecewiseConstant1D",
    "PiecewiseSmoothModel",
    "builtin_model",
    "model_names",
]
