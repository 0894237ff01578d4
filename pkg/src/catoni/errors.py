"""Exception types shared across the package."""


class CatoniError(Exception):
    """Base class for all package-specific failures."""


class DomainError(CatoniError, ValueError):
    """An argument is outside the mathematical domain of the operation."""


class DegenerateSampleError(CatoniError):
    """Sample has zero dispersion where positive dispersion is required."""


class NonConvergenceError(CatoniError):
    """Iterative solver exhausted its budget.

    Carries the last bracket / iterate so callers can report diagnostics.
    """

    def __init__(self, message, bracket=None, diagnostics=None):
        super().__init__(message)
        self.bracket = bracket
        self.diagnostics = diagnostics or {}


class SingularGramError(CatoniError):
    """Design matrix has a (numerically) singular Gram matrix."""


class ConfigError(CatoniError, ValueError):
    """Experiment configuration violates the documented schema."""


class HarnessAbortError(CatoniError):
    """An experiment cannot proceed (e.g. infeasible error-radius certificate)."""
