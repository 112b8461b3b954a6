"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes (see ``cli.EXIT_CODES``); library
code raises them directly.
"""


class KanpaintError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(KanpaintError, ValueError):
    """Tensor shapes are inconsistent for the requested operation."""


class ContractError(KanpaintError, ValueError):
    """A documented precondition of an operation was violated."""


class ConfigError(KanpaintError, ValueError):
    """Invalid configuration value, architecture string, or hyperparameter."""


class DataError(KanpaintError, ValueError):
    """Missing, malformed, or mismatched data files."""


class IncompatibilityError(KanpaintError, ValueError):
    """A checkpoint does not match the configuration it is used with."""
