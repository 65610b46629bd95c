"""Exception types raised across the package."""


class RegimeIterError(Exception):
    """Base class for all package errors."""


class ConfigError(RegimeIterError, ValueError):
    """A run configuration is malformed.  ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class InvalidProblem(RegimeIterError, ValueError):
    pass


class AbsorbingRegime(RegimeIterError):
    """Jump distribution requested for a regime with zero exit rate."""


class RateBoundViolated(RegimeIterError):
    """A state-dependent rate exceeded the declared thinning bound."""


class NonFiniteValue(RegimeIterError, FloatingPointError):
    """A user field or payoff returned NaN or infinity."""


class SandwichUnavailable(RegimeIterError):
    """The two-sided bounds need M_r^U < 1 and it does not hold."""


class SingularSystem(RegimeIterError, ArithmeticError):
    pass


class OutOfHull(RegimeIterError, ValueError):
    pass


class DomainExit(RegimeIterError):
    """A path left a half-line domain in an initial-value problem."""
