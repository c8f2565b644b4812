"""Exception types shared across the pipeline."""


class InvalidArgumentError(ValueError):
    """An operation received an argument violating its preconditions."""


class DegenerateInputError(ValueError):
    """Input is technically well-typed but numerically degenerate
    (zero-norm vector, densities underflowing to zero, ...)."""


class InvalidStateError(RuntimeError):
    """An operation was called on an object in the wrong state
    (e.g. selection metrics before any draw was recorded)."""


class FormatError(ValueError):
    """A binary file does not conform to its declared layout.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CrossFileError(ValueError):
    """Two pipeline files that must agree on shared dimensions do not."""


class ConfigError(ValueError):
    """A text config file contains unknown keys or unparseable values."""
