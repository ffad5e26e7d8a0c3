"""Exception hierarchy shared across the package."""


class UatomoError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(UatomoError, ValueError):
    """An argument violates a documented precondition."""


class SolverError(UatomoError, RuntimeError):
    """A linear solve failed; carries diagnostics about the failing system.

    Attributes
    ----------
    diagnostics : dict
        Free-form information (residual, iteration count, matrix size,
        frequency, source index) attached at the failure site.
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = dict(diagnostics)


class UndefinedContrastError(UatomoError, ZeroDivisionError):
    """Contrast weight is zero; the weighted RMS contrast is undefined."""
