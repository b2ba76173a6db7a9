"""Desk-scale laboratory for studying saddle points in class-imbalanced
training: synthetic long-tail datasets, re-weighted/margin losses, SGD/SAM/
PGD/LPF-SGD optimizers, Hessian spectral diagnostics, and amplification-factor
checks, all bitwise reproducible from (config, seed)."""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    EmptyClassError,
    GeometryError,
    InfeasibleProfileError,
    NumericError,
    ParameterError,
    RunAbortedError,
    SaddleLabError,
    UndefinedRatioError,
)
from .linalg import SeededRng, dot, gaussian_vector, matvec, norm2

__all__ = [
    "__version__",
    "SaddleLabError",
    "DimensionError",
    "ParameterError",
    "NumericError",
    "InfeasibleProfileError",
    "GeometryError",
    "EmptyClassError",
    "UndefinedRatioError",
    "ConfigError",
    "CheckpointError",
    "RunAbortedError",
    "SeededRng",
    "dot",
    "norm2",
    "matvec",
    "gaussian_vector",
]
