"""Exception types shared across the package."""


class MfsbError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MfsbError, ValueError):
    """Inconsistent dimensions, invalid parameters, or malformed inputs."""


class InputError(MfsbError, ValueError):
    """Invalid argument values (ordering, ranges, weights)."""


class NumericalDomainError(MfsbError, ArithmeticError):
    """An operation left its numerical domain (singular matrix, non-PD factor)."""


class ControllabilityError(MfsbError, ArithmeticError):
    """The controllability Grammian M(1,0) is numerically singular."""


class ConditioningError(MfsbError, ArithmeticError):
    """A recovered quantity is too ill-conditioned to trust."""


class DivergenceError(MfsbError, ArithmeticError):
    """A simulated trajectory produced non-finite values."""


class SchemaError(MfsbError, ValueError):
    """A scenario file violates the documented schema."""


class InfeasibleProblemError(MfsbError, RuntimeError):
    """A solve reported an infeasible (or unbounded) program."""

    def __init__(self, message, iteration=None, last_result=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_result = last_result


class SolverFailureError(MfsbError, RuntimeError):
    """The conic solver stopped without a usable certificate."""
