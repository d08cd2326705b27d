"""Exception types shared across the package."""


class BudgetError(ValueError):
    """A requested budget lies outside the feasible interval.

    Carries the feasible interval so callers (and the CLI) can report it.
    """

    def __init__(self, message, feasible_min=None, feasible_max=None):
        super().__init__(message)
        self.feasible_min = feasible_min
        self.feasible_max = feasible_max


class TraceError(Exception):
    """Base class for attention-trace container failures."""


class TraceFormatError(TraceError):
    """Stream is not an attention trace (bad magic or unsupported version)."""


class TraceCorruptionError(TraceError):
    """Structurally broken trace: truncated payload, impossible dims, trailing bytes."""


class TraceValidationError(TraceError):
    """Trace parsed but its contents violate attention invariants."""
