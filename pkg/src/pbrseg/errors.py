"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration errors -> 1,
data/format errors -> 2, numerical failures -> 3.
"""


class PbrsegError(Exception):
    """Base class for all package errors."""


class ConfigError(PbrsegError):
    """Invalid configuration or a violated shape/channel contract."""


class DataError(PbrsegError):
    """Bad input data: unreadable files, malformed payloads, invalid values."""


class MagicError(DataError):
    """Unrecognized file format (magic bytes mismatch)."""


class TruncationError(DataError):
    """Payload shorter (or longer) than the header promises."""


class SchemaError(DataError):
    """Structurally readable but semantically invalid content."""


class UndefinedMetricError(DataError):
    """A metric precondition failed (e.g. Hausdorff on an empty mask)."""


class NumericalError(PbrsegError):
    """Non-finite values encountered during optimization."""
