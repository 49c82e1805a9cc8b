"""Kolmogorov-Arnold network layers over B-spline and Gaussian RBF bases."""

__version__ = "0.1.0"

from .basis import BSplineBasis, GaussianRBFBasis, GridSpec, make_basis
from .basisfit import FitReport, emit_fit_curves, fit_transform
from .layers import KanLayer, LayerNorm, LinearLayer
from .network import Network, NetworkSpec, TrainConfig, build, load, save, train

__all__ = [
    "BSplineBasis",
    "GaussianRBFBasis",
    "GridSpec",
    "make_basis",
    "FitReport",
    "emit_fit_curves",
    "fit_transform",
    "KanLayer",
    "LayerNorm",
    "LinearLayer",
    "Network",
    "NetworkSpec",
    "TrainConfig",
    "build",
    "load",
    "save",
    "train",
]
