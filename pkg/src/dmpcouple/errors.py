"""Exception types raised across the package."""


class DmpError(Exception):
    """Base class for all package errors."""


class DomainError(DmpError, ValueError):
    """An input lies outside the domain of an operation (non-finite, wrong shape)."""


class ConfigError(DmpError, ValueError):
    """Invalid configuration: step sizes, gains, paths."""


class FitError(DmpError):
    """Forcing-term fitting failed on a degenerate demonstration."""


class FrameError(DmpError, ValueError):
    """A local frame cannot be built (start and goal coincide)."""


class IntegrationError(DmpError, RuntimeError):
    """An unroll produced a non-finite state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TargetError(DmpError):
    """Coupling targets cannot be extracted from a demonstration."""


class TrainingError(DmpError, RuntimeError):
    """Levenberg-Marquardt training could not make progress."""


class GenerationError(DmpError, RuntimeError):
    """The synthetic demonstration oracle diverged."""


class ArtifactError(DmpError):
    """A stored artifact is missing, corrupt, or has the wrong schema."""
