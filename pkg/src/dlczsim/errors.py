"""Exception types shared across the package."""


class InsufficientStatisticsError(ValueError):
    """Raised when an estimator's denominator is zero (no usable counts)."""


class FitConvergenceError(RuntimeError):
    """Raised when a calibration fit fails to converge within its budget.

    Carries the best iterate found so callers can inspect it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NotBracketedError(ValueError):
    """Raised when a target value is not bracketed by a sampled curve."""
