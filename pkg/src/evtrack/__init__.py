"""Event-camera pupil tracking: framing, training, quantization, planning."""

from .errors import (CapacityError, ConfigError, DataError, EvtrackError,
                     FormatError, InvariantError)
from .estimators import PupilGridClassifier, PupilRegressor

__all__ = [
    "EvtrackError", "ConfigError", "DataError", "FormatError",
    "CapacityError", "InvariantError",
    "PupilRegressor", "PupilGridClassifier",
]

__version__ = "0.1.0"
