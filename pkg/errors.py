"""
Exception types shared by the frequency-domain continual learning engine.

Every error derives from CLFDError and from the closest builtin, so callers
can catch either the project-specific type or the generic one.
"""


class CLFDError(Exception):
    """Base class for all engine errors."""


class DimensionError(CLFDError, ValueError):
    """A plane or image has an odd (or too small) spatial dimension."""

    def __init__(self, axis, size):
        self.axis = axis
        self.size = size
        super().__init__(f"{axis} must be even and >= 2, got {size}")


class ShapeMismatchError(CLFDError, ValueError):
    """Arrays that must share a shape do not."""


class NonFiniteValueError(CLFDError, ValueError):
    """An input contains NaN or infinite values."""


class DegenerateSignatureError(CLFDError, ValueError):
    """A class signature has zero norm, so its direction is undefined."""


class PreconditionError(CLFDError, ValueError):
    """An operation was called in a state it does not support."""


class EmptyBufferError(CLFDError, LookupError):
    """A draw was requested from a buffer that holds no entries."""


class UnknownClassError(CLFDError, KeyError):
    """A class id is not registered with the selection counter."""


class ConfigError(CLFDError, ValueError):
    """A configuration key or value is invalid.

    Attributes:
        key (str): Offending dotted key, if any.
        line (int): 1-based line number in the config file, if known.
        suggestion (str): Closest known key for unknown-key errors.
    """

    def __init__(self, message, key=None, line=None, suggestion=None):
        self.key = key
        self.line = line
        self.suggestion = suggestion
        prefix = f"line {line}: " if line is not None else ""
        hint = f" (did you mean '{suggestion}'?)" if suggestion else ""
        super().__init__(f"{prefix}{message}{hint}")


class DatasetFormatError(CLFDError, ValueError):
    """A dataset file is truncated or holds out-of-range labels."""


class TaskOrderError(CLFDError, RuntimeError):
    """Tasks were submitted to the trainer out of order."""


class NonFiniteLossError(CLFDError, RuntimeError):
    """Training produced a NaN or infinite loss.

    Attributes:
        dump_path (str): Where the diagnostic state dump was written.
    """

    def __init__(self, message, dump_path=None):
        self.dump_path = dump_path
        super().__init__(message if dump_path is None else f"{message} (state dumped to {dump_path})")


class MissingArtifactError(CLFDError, FileNotFoundError):
    """A run directory lacks an artifact the command needs."""
