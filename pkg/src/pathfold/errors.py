"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 for configuration problems, 3 for numerical failures, 4 for
non-convergence.
"""


class PathfoldError(Exception):
    exit_code = 1


class ConfigError(PathfoldError):
    """Malformed or invalid model/scenario/data input."""

    exit_code = 2

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class ValidationError(ConfigError):
    """Input parsed but violates a model invariant."""


class DataError(ConfigError):
    """Time-series input that cannot be used as given."""


class NumericalError(PathfoldError):
    exit_code = 3


class DegenerateMetricError(NumericalError):
    """Diffusion matrix is singular or not positive definite at a point."""

    def __init__(self, message, point=None):
        self.point = point
        super().__init__(message)


class StabilityError(NumericalError):
    def __init__(self, message, max_dt=None):
        self.max_dt = max_dt
        super().__init__(message)


class MeshConsistencyError(NumericalError):
    def __init__(self, message, suggested_dt=None):
        self.suggested_dt = suggested_dt
        super().__init__(message)


class BlowUpError(NumericalError):
    def __init__(self, message, epoch=None, trajectory=None):
        self.epoch = epoch
        self.trajectory = trajectory
        super().__init__(message)


class NegativeMassError(NumericalError):
    pass


class BudgetError(NumericalError):
    """Requested dense-mesh computation exceeds the supported size."""


class ConvergenceError(PathfoldError):
    exit_code = 4


class SamplerError(ConvergenceError):
    pass


class InfeasibleError(ConvergenceError):
    pass
