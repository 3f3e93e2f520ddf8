"""Force matching and related coarse-graining tools for small model systems."""

from . import cgmap, fmatch, meanforce, microsys, refmethods, sampler
from .exceptions import (
    CGMatchError,
    ConfigError,
    DegenerateMapError,
    DimensionError,
    OptimizationError,
    QuadratureError,
    SamplingError,
    SingularMatrixError,
)

__version__ = "0.1.0"

__all__ = [
    "cgmap",
    "fmatch",
    "meanforce",
    "microsys",
    "refmethods",
    "sampler",
    "CGMatchError",
    "ConfigError",
    "DegenerateMapError",
    "DimensionError",
    "OptimizationError",
    "QuadratureError",
    "SamplingError",
    "SingularMatrixError",
]
