"""Exception types shared across the package."""


class HodgeflowError(Exception):
    """Base class for all package errors."""


class ContractError(HodgeflowError, ValueError):
    """An input violates a documented precondition."""


class ShapeError(ContractError):
    """Array shapes do not agree."""


class NumericalError(HodgeflowError, ArithmeticError):
    """A linear solve or iterative method failed.

    ``detail`` carries whatever diagnostic the failing routine could measure
    (condition estimate, achieved residual, iteration count).
    """

    def __init__(self, message, **detail):
        super().__init__(message)
        self.detail = detail


class DivergenceError(HodgeflowError, FloatingPointError):
    """Learner parameters became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
