"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class SpectralMIMError(Exception):
    """Base class for library errors."""


class InvalidDimension(SpectralMIMError):
    pass


class DegenerateSignals(SpectralMIMError):
    pass


class MissingDensity(SpectralMIMError):
    pass


class UnsupportedCombination(SpectralMIMError):
    pass


class NumericalDomainError(SpectralMIMError):
    """Non-finite integrand value; ``node`` holds the offending node."""

    def __init__(self, message: str, node=None):
        super().__init__(message)
        self.node = node


class IntegrationFailure(SpectralMIMError):
    def __init__(self, message: str, error_estimate: float = float("nan")):
        super().__init__(message)
        self.error_estimate = error_estimate


class DomainError(SpectralMIMError):
    pass


class SolverFailure(SpectralMIMError):
    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class BracketError(SpectralMIMError):
    pass


class EigenspaceInvarianceViolation(SpectralMIMError):
    pass


class DegenerateObjective(SpectralMIMError):
    pass


class NearPoleError(SpectralMIMError):
    pass


class NotAnOutlier(SpectralMIMError):
    pass


class ConfigError(SpectralMIMError):
    pass
