"""Exception hierarchy shared by all modules."""


class OptQueueError(Exception):
    """Base class for library errors."""


class ValidationError(OptQueueError, ValueError):
    """Input violates a documented precondition or type invariant."""


class FeasibilityError(ValidationError):
    """A service discipline violates the subset-feasibility constraint."""


class RegularityError(ValidationError):
    """An operation that requires a regular process received a non-regular one."""


class UnsupportedError(ValidationError):
    """A requested variant is not defined for the given inputs."""


class NumericalError(OptQueueError, ArithmeticError):
    """A numerical routine failed to converge or hit a singular system."""
