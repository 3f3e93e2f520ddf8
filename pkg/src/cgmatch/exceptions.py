"""Exception types shared across the package."""


class CGMatchError(Exception):
    """Base class for all package errors."""


class DimensionError(CGMatchError, ValueError):
    """Array shape does not match the declared number of degrees of freedom."""


class DegenerateMapError(CGMatchError, ArithmeticError):
    """A coarse-graining map is evaluated at a singular geometry.

    Raised for coincident end points of a distance coordinate or collinear
    bending angles, where the Jacobian is undefined or rank deficient.
    """


class SingularMatrixError(CGMatchError, ArithmeticError):
    """A matrix that must be inverted is singular or too ill-conditioned."""


class SamplingError(CGMatchError, RuntimeError):
    """The Monte Carlo sampler met a non-finite energy."""


class QuadratureError(CGMatchError, RuntimeError):
    """A grid quadrature failed its self-reported accuracy check."""


class ConfigError(CGMatchError, ValueError):
    """An experiment configuration is malformed or references unknown names."""


class OptimizationError(CGMatchError, RuntimeError):
    """An optimizer could not decrease its objective."""
