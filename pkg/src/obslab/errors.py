"""Exception hierarchy shared by every obslab module."""


class ObslabError(Exception):
    """Base class for all library errors."""


class UsageError(ObslabError, ValueError):
    """Arguments violate a documented precondition."""


class DomainError(ObslabError, ValueError):
    """A time or point lies outside the domain of definition."""


class EllipticityError(ObslabError):
    """The symbol is not uniformly strongly elliptic, so no bounded propagator exists."""


class HypothesisViolation(ObslabError):
    """Fitted constants contradict a structural hypothesis (e.g. gamma2 <= gamma1)."""


class ChainTruncatedError(ObslabError):
    """No admissible density chain of the requested depth was found."""

    def __init__(self, message, achieved_depth):
        super().__init__(message)
        self.achieved_depth = achieved_depth


class IntegrationError(ObslabError):
    """An ODE solve did not meet its tolerance."""


class AliasingError(ObslabError):
    """Spectral spill of a sheared transform exceeded the allowed tolerance."""

    def __init__(self, message, spill):
        super().__init__(message)
        self.spill = spill


class ConfigError(ObslabError):
    """Malformed or incomplete run configuration."""
