"""Exception hierarchy shared across the package."""


class GregLinkError(Exception):
    """Base class for all package errors."""


class ValidationError(GregLinkError, ValueError):
    """Invalid inputs: broken invariants, malformed files, bad parameters."""


class NumericalError(GregLinkError, ArithmeticError):
    """Numerical failure: singular normal equations, guard limits exceeded."""
