"""Exception hierarchy shared by every qchaos module.

The CLI maps the three top-level families onto exit codes:
ConfigError -> 1, NumericalError -> 2, MissingDependencyError/StaleCacheError -> 3.
"""


class QChaosError(Exception):
    """Base class for all qchaos errors"""
    pass


class ModelError(QChaosError, ValueError):
    """Invalid domain value (non-finite coefficient, non-positive mass, ...)"""
    pass


class ConfigError(QChaosError):
    """Run configuration could not be read or validated"""
    pass


class NumericalError(QChaosError):
    """A numerical procedure failed or left its valid range"""
    pass


class GridError(NumericalError, ValueError):
    """Grid or point placement problem"""
    pass


class EvolutionRangeError(NumericalError):
    """Field magnitude left the representable floating point range"""
    pass


class ConvergenceError(NumericalError):
    """Iteration did not converge within its iteration limit"""
    pass


class BoundaryValueError(NumericalError):
    """Euclidean boundary value problem could not be solved"""

    def __init__(self, message: str, residual: float = float('nan'), pair=None):
        super().__init__(message)
        self.residual = residual
        self.pair = pair


class FitError(NumericalError):
    """Quantum action fit failed"""
    pass


class TrajectoryEscapeError(NumericalError):
    """Trajectory left the configured bounding box"""
    pass


class ShellSamplingError(NumericalError):
    """Energy shell sampling failed"""
    pass


class StatsError(NumericalError):
    """Statistical reduction is not possible for the given input"""
    pass


class MissingDependencyError(QChaosError):
    """A prerequisite stage has not produced its artifacts"""

    def __init__(self, stage: str, prerequisite: str):
        super().__init__(f"Stage '{stage}' needs '{prerequisite}' to be run first")
        self.stage = stage
        self.prerequisite = prerequisite


class StaleCacheError(QChaosError):
    """Cached inputs were produced under a different configuration"""
    pass
