"""Exception types shared across the package."""


class HyperdiscError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(HyperdiscError, ValueError):
    """An argument violates a documented precondition."""


class InsufficientDataError(HyperdiscError):
    """Too few periods or observations for the requested computation.

    ``assumption`` names the violated identification condition (for
    example ``"5(a)"``) when the shortfall corresponds to one.
    """

    def __init__(self, message, assumption=None):
        super().__init__(message)
        self.assumption = assumption


class AssumptionViolationError(HyperdiscError):
    """A testable identification condition fails on the supplied inputs."""

    def __init__(self, message, assumption):
        super().__init__(message)
        self.assumption = assumption


class NonConvergenceError(HyperdiscError):
    """Every optimizer start failed to converge.

    ``records`` holds the per-start bookkeeping so callers can inspect
    what happened.
    """

    def __init__(self, message, records=()):
        super().__init__(message)
        self.records = list(records)


class EmptySummaryError(HyperdiscError):
    """No successful replications were available to summarize."""
