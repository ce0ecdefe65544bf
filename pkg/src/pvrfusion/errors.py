"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent for the requested operation."""


class InputError(ValueError):
    """A value-level precondition on an argument was violated."""


class UsageError(RuntimeError):
    """An API was called in an unsupported way."""


class FormatError(RuntimeError):
    """A serialized artifact is malformed, truncated, or has a bad version."""


class TrainingError(RuntimeError):
    """Optimization failed, e.g. the loss became non-finite."""
