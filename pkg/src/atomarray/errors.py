"""Exception hierarchy shared by all simulator modules."""


class AtomArrayError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AtomArrayError, ValueError):
    """Invalid geometry, drive or run configuration."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class CapacityError(AtomArrayError):
    """Requested Hilbert space is too large for the chosen backend."""


class SingularityError(AtomArrayError, ValueError):
    """A quantity was evaluated at a point where it diverges."""


class ConvergenceError(AtomArrayError, RuntimeError):
    """An iterative solver or integrator failed to reach its tolerance."""

    def __init__(self, message, residual=None, **info):
        super().__init__(message)
        self.residual = residual
        self.info = info
