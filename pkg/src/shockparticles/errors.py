"""Exception types shared across the package."""


class DomainError(ValueError):
    """A value lies outside the admissible range of an operation."""


class ConfigError(ValueError):
    """A configuration or named lookup could not be resolved."""


class SolverError(RuntimeError):
    """Time integration could not proceed."""


class StepRejected(SolverError):
    """A Runge-Kutta step produced non-finite values."""


class IntegrationAccuracyError(SolverError):
    """A collision was localized too loosely for the merge to be consistent."""


class PendingMerge(SolverError):
    """Neighbouring particles coincide with distinct inner states.

    Raised by the right-hand side instead of returning infinities; the
    evolution loop is expected to merge ``pairs`` (left indices) first.
    """

    def __init__(self, pairs):
        self.pairs = list(pairs)
        super().__init__(f"coincident particles pending merge at pairs {self.pairs}")
