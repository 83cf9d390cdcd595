"""Exception types shared across the package."""


class EaboError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(EaboError):
    """A matrix could not be Cholesky-factorized even after jitter."""


class UnsupportedOrder(EaboError):
    """Quadrature order outside the supported range."""


class UnsupportedDimension(EaboError):
    """Dimension outside the supported range (Sobol or tensor quadrature)."""


class NonFiniteObjective(EaboError):
    """An optimization objective returned NaN or infinity."""


class DimensionMismatch(EaboError):
    """Array shapes inconsistent with the model dimensions."""


class NegativeVariance(EaboError):
    """A variance came out negative beyond round-off tolerance."""


class DegenerateNu(EaboError):
    """The comparison innovation scale nu = sqrt(var_delta + 2*sigma_comp^2) is zero."""


class OutOfDomain(EaboError):
    """A query point lies outside the benchmark domain [0, 1]^d."""


class BudgetExhausted(EaboError):
    """No action is affordable under the remaining budget."""


class OracleFailure(EaboError):
    """The oracle failed to answer an action."""


class EmptyTrajectory(EaboError):
    """An operation that needs at least one logged step got an empty trajectory."""


class EmptyResults(EaboError):
    """A results directory contains no trajectory files."""


class ConfigError(EaboError):
    """A run configuration failed validation.

    ``field`` names the offending entry when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
