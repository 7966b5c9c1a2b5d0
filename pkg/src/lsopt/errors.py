"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid construction parameters or run configuration."""


class SolverError(RuntimeError):
    """A linear solve failed to converge.

    Carries the final residual norm so callers can report how far off the
    solve ended.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NewtonError(SolverError):
    """Newton iteration exhausted its budget; keeps the residual history."""

    def __init__(self, message, residuals):
        super().__init__(message, residual=residuals[-1] if residuals else None)
        self.residuals = list(residuals)
