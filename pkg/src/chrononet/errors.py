"""Exception hierarchy shared by every chrononet module."""


class ChronoNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ChronoNetError):
    """Tensor extents do not conform for the requested operation."""


class ContractError(ChronoNetError):
    """An operation was invoked outside its documented preconditions."""


class ConfigError(ChronoNetError):
    """A model or run configuration violates one of its invariants."""


class DataError(ChronoNetError):
    """Input data is structurally valid but semantically unusable."""


class FormatError(ChronoNetError):
    """A binary or text file does not match its expected layout.

    ``offset`` carries the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(ChronoNetError):
    """A non-finite value appeared where finite arithmetic was required."""
