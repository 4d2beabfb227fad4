"""Exception hierarchy shared by all toolkit modules."""


class ToolkitError(Exception):
    """Base class for every error raised by :mod:`schrodn`."""


class DomainError(ToolkitError, ValueError):
    """A point lies outside the chart disk."""


class MetricError(ToolkitError, ValueError):
    """The metric is not symmetric positive definite at some point."""


class NonTrappingError(ToolkitError):
    """A geodesic did not leave the disk within the arclength cap."""


class SimplicityError(ToolkitError):
    """Two-point shooting failed (conjugate points or non-simple metric)."""


class ConditioningError(ToolkitError):
    """An iterative or direct linear solve broke down."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SolverStepError(ToolkitError):
    """A time step of an evolution solver failed."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class PhaseUnwrapError(ToolkitError):
    """The probe estimate left the regime where a complex log is meaningful."""


class FieldTooLargeError(ToolkitError):
    """Too many rays failed phase extraction during reconstruction."""


class NonlinearityError(ToolkitError):
    """Picard iteration for the potential channel diverged."""


class ConfigError(ToolkitError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
