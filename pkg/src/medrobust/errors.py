"""Exception hierarchy shared across the package."""


class MedRobustError(Exception):
    """Base class for all package errors."""


class InputError(MedRobustError, ValueError):
    """Malformed data, configuration or model specification."""


class RankDeficiencyError(MedRobustError, ValueError):
    """A design or normal-equation matrix is rank deficient."""


class ConvergenceError(MedRobustError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``result`` holds the last iterate when one is available.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularJacobianError(ConvergenceError):
    """Newton step could not be computed because the Jacobian is singular."""


class WeakIdentificationError(MedRobustError, RuntimeError):
    """The bread matrix is numerically singular.

    For the heteroskedasticity-identified estimators this almost always means
    var(M | A, X) does not vary with A in the sample.
    """

    def __init__(self, message, condition_estimate=None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class NegativeVarianceError(MedRobustError, ArithmeticError):
    """A quadratic-form variance came out negative."""
