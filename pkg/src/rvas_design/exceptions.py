"""Exception hierarchy shared by every module."""


class RvasError(Exception):
    """Base class for errors raised by rvas_design."""


class DomainError(RvasError, ValueError):
    """An argument lies outside the domain of the function."""


class ConvergenceError(RvasError, ArithmeticError):
    """An iterative routine failed to reach its tolerance."""

    def __init__(self, message, iterations):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class DegenerateError(RvasError, ArithmeticError):
    """A statistic is undefined for the given inputs (e.g. zero variance)."""


class TruncationError(RvasError, RuntimeError):
    """The requested truncation bound cannot be met within the atom budget."""


class InfeasibleError(RvasError, ValueError):
    """No design satisfies the budget constraint."""
