"""Exception hierarchy. Each family maps onto one CLI exit code."""


class SRLaserError(Exception):
    exit_code = 3


class ConfigError(SRLaserError):
    """Malformed, incomplete or unknown configuration."""

    exit_code = 2


class ValidationError(ConfigError, ValueError):
    """A value violates a type invariant (negative rate, NaN, R > 1, ...)."""


class DegenerateRateError(ValidationError):
    """A formula is undefined for the given rates (e.g. kappa = 0 for C1)."""


class NumericalError(SRLaserError):
    exit_code = 3


class StepSizeError(NumericalError):
    def __init__(self, message, t_reached=None):
        super().__init__(message)
        self.t_reached = t_reached


class InvariantViolation(NumericalError):
    pass


class SteadyStateError(NumericalError):
    """Steady state not reached; carries residual and integrated time."""

    def __init__(self, message, residual=None, t_integrated=None, state=None):
        super().__init__(message)
        self.residual = residual
        self.t_integrated = t_integrated
        self.state = state


class ResolutionError(NumericalError):
    pass


class InsufficientDecayError(NumericalError):
    pass


class FitError(NumericalError):
    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class BudgetError(SRLaserError):
    """Requested work exceeds a configured memory or cell budget."""

    exit_code = 4
