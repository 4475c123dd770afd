"""Exception types shared across the package.

Each maps to a stable CLI exit code (see ``pcc.cli``).
"""


class PCCError(Exception):
    """Base class for all package errors."""


class ConfigError(PCCError, ValueError):
    """Invalid configuration value or unsupported parameter combination."""


class DimensionError(PCCError, ValueError):
    """Array extents do not agree."""


class ContractError(PCCError, ValueError):
    """A precondition of an operation was violated."""


class FormatError(PCCError, ValueError):
    """A file could not be parsed."""


class DataError(PCCError):
    """Dataset layout or content problem."""


class NonFiniteLossError(PCCError, FloatingPointError):
    """Training produced a NaN or infinite loss."""


class CheckpointMismatch(PCCError):
    """Checkpoint parameters do not fit the model being loaded into."""
