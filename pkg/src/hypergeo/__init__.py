"""Geometry-aware hyperbolic distances with pair-specific projection and curvature."""

__version__ = "0.1.0"

from . import ball, data, diffcore, ghdm, hyperbolicity, mining, trainer  # noqa: E402
from .ball import BallPoint  # noqa: E402
from .errors import (  # noqa: E402
    HypergeoError,
    NumericalFaultError,
    ValidationError,
)

__all__ = [
    "BallPoint",
    "HypergeoError",
    "NumericalFaultError",
    "ValidationError",
    "ball",
    "data",
    "diffcore",
    "ghdm",
    "hyperbolicity",
    "mining",
    "trainer",
]
