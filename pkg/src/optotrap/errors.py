"""Exception types raised across the package."""


class OptotrapError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(OptotrapError, ValueError):
    """A physical parameter violates one of its invariants."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConvergenceError(OptotrapError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class EquilibriumError(OptotrapError, ValueError):
    """A supplied mirror position is not a static equilibrium."""


class DegeneratePolynomialError(OptotrapError, ValueError):
    pass


class SingularSystemError(OptotrapError):
    pass


class FitError(OptotrapError):
    """A Lorentzian fit failed or its residual exceeded the threshold."""


class UnstableSystemError(OptotrapError):
    """Refusal to proceed with a dynamically unstable configuration."""


class StepSizeError(OptotrapError, ValueError):
    pass


class SimulationDivergedError(OptotrapError):
    """Trajectory amplitude crossed the abort cutoff."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InsufficientDataError(OptotrapError, ValueError):
    pass


class NoPeakError(OptotrapError):
    pass


class ConfigError(OptotrapError, ValueError):
    pass
