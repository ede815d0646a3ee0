"""Exception types shared across the package."""


class PceError(Exception):
    """Base class for all package errors."""


class InputError(PceError, ValueError):
    """An argument is outside the domain an operation accepts."""


class SizeError(PceError, ValueError):
    """A requested object would exceed integer range or a compute budget."""


class NumericalError(PceError, ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite state)."""


class InfeasibleError(PceError, ValueError):
    """A bound or plan is requested outside the hypotheses it holds under."""
