"""Exception types raised across the package."""


class DomainError(ValueError):
    """A time or state argument lies outside the admissible domain."""


class SingularScheduleError(ValueError):
    """The noise schedule vanishes somewhere and cannot be rescaled."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class DivergenceError(FloatingPointError):
    """A simulated trajectory produced NaN or Inf."""

    def __init__(self, step, message=None):
        super().__init__(message or f"non-finite state at step {step}")
        self.step = step


class StabilityError(ValueError):
    """Requested time step exceeds the solver's admissible bound."""

    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class DomainTooSmallError(RuntimeError):
    """Mass reached the boundary of the spatial grid."""


class UnreliableQuadratureError(RuntimeError):
    """The truncated tail carries too much of an integral."""


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step):
        super().__init__(f"loss became non-finite at training step {step}")
        self.step = step


class ConfigError(ValueError):
    """Configuration failed validation; message names the offending field."""
