"""Typed errors raised across the package."""


class ConceptForgeError(Exception):
    """Base class for all package errors."""


class DegenerateSystem(ConceptForgeError):
    pass


class RankDeficiency(ConceptForgeError):
    pass


class DimensionMismatch(ConceptForgeError, ValueError):
    pass


class BudgetExceeded(ConceptForgeError):
    pass


class InfeasibleConcept(ConceptForgeError):
    pass


class NumericalDivergence(ConceptForgeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DegenerateTruth(ConceptForgeError):
    pass


class NotQuadratic(ConceptForgeError):
    pass


class SubsetBudget(ConceptForgeError):
    pass


class SignAmbiguity(ConceptForgeError):
    pass


class ZeroDirection(ConceptForgeError):
    pass


class ConfigError(ConceptForgeError, ValueError):
    pass
