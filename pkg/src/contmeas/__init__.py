"""Continuous decomposition of two-outcome measurements into probe-feedback walks."""
from .errors import (
    ContmeasError,
    InputError,
    NormalizationError,
    ResourceLimitError,
    SaturationError,
    SimulationError,
)

__version__ = "0.1.0"
