"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class EmptySequenceError(ValueError):
    """An operation needs at least one time step."""


class NonFiniteError(FloatingPointError):
    """A kernel op produced NaN or Inf."""


class ConfigError(ValueError):
    """Invalid configuration value or mismatched dimensions."""


class FormatError(ValueError):
    """Malformed binary file. ``offset`` is the byte position where reading failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
