"""Exception taxonomy shared by the solver modules and the command line."""


class ScatteringError(Exception):
    """Base class for every error raised by fastmonopole."""

    #: process exit code used by the command line front end
    exit_code = 3


class DomainError(ScatteringError, ValueError):
    """An argument lies outside the domain of a mathematical function."""


class GeometryError(ScatteringError, ValueError):
    """Invalid curve, rod layout or cluster arrangement."""

    exit_code = 2


class ConfigError(ScatteringError, ValueError):
    """Malformed or inconsistent scenario description."""

    exit_code = 2


class SingularSystemError(ScatteringError):
    """A linear system could not be solved to the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(ScatteringError):
    """An iterative procedure failed to reach its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class DivergenceError(ConvergenceError):
    """The coupling iteration residual grew over consecutive sweeps."""
