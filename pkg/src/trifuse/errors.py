"""Exception taxonomy shared across the package.

CLI exit codes: ConfigError -> 2, DataIOError -> 3, NumericalError -> 4.
"""


class TrifuseError(Exception):
    """Base class for all package errors."""


class ConfigError(TrifuseError):
    """Unknown preset, mode, off-grid parameter, or bad config key."""


class ShapeError(TrifuseError):
    """Divisibility or shape-compatibility violation."""


class InputError(TrifuseError):
    """Out-of-range or non-finite input values."""


class ProjectionError(TrifuseError):
    """Constrained-kernel projection hit a degenerate slice."""


class ContractViolation(TrifuseError):
    """A module was called with its stated precondition broken."""


class DataIOError(TrifuseError):
    """Missing, corrupt, or malformed sample files."""


class CheckpointError(TrifuseError):
    """Checkpoint archive missing, corrupt, or incompatible."""


class NumericalError(TrifuseError):
    """Non-finite loss or activation encountered during training."""
