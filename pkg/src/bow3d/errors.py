"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class Bow3dError(Exception):
    """Base class for all toolkit errors."""


class UsageError(Bow3dError):
    """Bad command-line invocation (unknown subcommand, missing flag)."""


class DataError(Bow3dError):
    """Problem with input data: missing files, malformed formats, bad config."""


class PcdError(DataError):
    """Malformed or unsupported PCD content."""


class ConfigError(DataError):
    """Invalid experiment configuration."""


class NumericError(Bow3dError):
    """Numerical failure: infeasible clustering, solver breakdown."""
