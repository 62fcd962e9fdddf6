"""Exception and warning types shared across the package."""


class DietError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DietError, ValueError):
    """Raised when an argument violates a documented precondition."""


class ParseError(DietError, ValueError):
    """Raised for malformed CSV input; ``row`` is the 1-based data row (0 = header)."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class TrainingError(DietError, RuntimeError):
    """Raised when network training produces non-finite values."""

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"layer {layer}: {message}")
        self.layer = layer


class StateError(DietError, RuntimeError):
    """Raised when an operation is called out of order (e.g. backward before forward)."""


class ConfigError(DietError, ValueError):
    """Raised for experiment configurations that fail schema or semantic checks."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class TaskError(DietError, RuntimeError):
    """Wraps a failure inside one unit of a batch (a coordinate or a replicate)."""

    def __init__(self, message, kind, index):
        super().__init__(f"{kind} {index}: {message}")
        self.kind = kind
        self.index = index


class DegenerateStatisticWarning(RuntimeWarning):
    """Emitted when a statistic falls back to its documented degenerate value."""
