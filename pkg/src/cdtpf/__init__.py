"""Doob h-transform control learning and guided particle filtering for
discretely observed diffusions."""

from cdtpf.sde_core import (
    BrownianPath,
    DiffusionModel,
    NumericalDivergenceError,
    TimeGrid,
)

__all__ = [
    "BrownianPath",
    "DiffusionModel",
    "NumericalDivergenceError",
    "TimeGrid",
]

__version__ = "0.1.0"
