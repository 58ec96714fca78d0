"""Exception hierarchy shared by every module of the package."""


class LQError(Exception):
    """Base class for all errors raised by ofu_lqr."""


class DimensionError(LQError, ValueError):
    """Matrix or vector shapes do not conform."""


class DomainError(LQError, ValueError):
    """An argument lies outside the domain of an operation."""


class InstabilityError(LQError):
    """A matrix required to be stable has spectral radius >= 1."""


class NotStabilizableError(LQError):
    """The Riccati iteration diverged or produced an unstable closed loop."""


class NumericalError(LQError, ArithmeticError):
    """A numerical guard was tripped (singular solve, non-finite values)."""


class RankDeficiencyError(NumericalError):
    """The empirical covariance is singular and no ridge was supplied."""

    def __init__(self, message, lambda_min=None):
        super().__init__(message)
        self.lambda_min = lambda_min


class EmptyRegionError(LQError):
    """Rejection sampling found no feasible parameter."""

    def __init__(self, message, acceptance_rate=0.0):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


class SelectionFailure(LQError):
    """No feasible stabilizable candidate was available for OFU selection."""


class SampleSizeOverflow(LQError):
    """No sample size below the search cap satisfies the thresholds."""

    def __init__(self, message, binding=None):
        super().__init__(message)
        self.binding = binding


class BlowUpError(LQError):
    """Simulated state exceeded the blow-up guard."""

    def __init__(self, message, step=None, norm=None):
        super().__init__(message)
        self.step = step
        self.norm = norm
