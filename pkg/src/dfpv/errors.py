"""Exception types raised across the package."""


class DfpvError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DfpvError, ValueError):
    """An input violates an operation's preconditions."""


class SingularMatrixError(DfpvError, ArithmeticError):
    """A symmetric positive-definite factorization could not be obtained."""


class DegenerateBandwidthError(DfpvError, ValueError):
    """The median pairwise distance is zero, so no kernel bandwidth exists."""


class NonFiniteLossError(DfpvError, ArithmeticError):
    """A loss evaluated to NaN or infinity.

    ``iteration`` and ``loss_trace`` are filled in by the training loop so the
    caller can see where the run diverged.
    """

    def __init__(self, message, iteration=None, loss_trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.loss_trace = list(loss_trace) if loss_trace is not None else []


class ConfigError(DfpvError, ValueError):
    """An experiment configuration is missing, unreadable or invalid."""
