"""Exception hierarchy shared by all evtrack modules.

Each class maps onto a CLI exit code (see cli.py): config errors exit 2,
data/format errors 3, capacity/infeasibility 4, internal invariant
violations 5.
"""


class EvtrackError(Exception):
    """Base class for all evtrack errors."""


class ConfigError(EvtrackError):
    """Bad pipeline configuration (missing file, unknown preset, ...)."""


class DataError(EvtrackError):
    """Malformed or invalid input data."""


class FormatError(DataError):
    """A file does not parse under its declared format."""


class CapacityError(EvtrackError):
    """A plan or model does not fit the platform's resources."""


class InvariantError(EvtrackError):
    """An internal consistency check failed (signals a bug)."""
