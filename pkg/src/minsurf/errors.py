"""Exception types shared across the package."""


class MinsurfError(Exception):
    """Base class for all package errors."""


class ChartDomainError(MinsurfError):
    """A point (or a geodesic) left the coordinate chart of the metric.

    Carries ``exit_parameter`` when raised from geodesic integration.
    """

    def __init__(self, message, exit_parameter=None):
        super().__init__(message)
        self.exit_parameter = exit_parameter


class DomainError(MinsurfError):
    """A query point is outside the domain, or domain data is inconsistent."""


class OutOfTubeError(DomainError):
    """Evaluation requested beyond the validated collar of the boundary."""


class ValidationError(MinsurfError):
    """Constructed geometry failed a consistency check (e.g. under-resolved curvature)."""


class NumericError(MinsurfError):
    """An iterative numerical routine failed to converge.

    ``best`` carries the best candidate found (routine specific).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SolverError(MinsurfError):
    """Linear-algebra breakdown inside the nonlinear solver."""


class ConfigError(MinsurfError):
    """A scenario configuration is malformed or incomplete."""
