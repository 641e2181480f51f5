"""Exception types shared across the package."""


class SignAdvError(Exception):
    """Base class for all package errors."""


class ShapeError(SignAdvError, ValueError):
    """Tensor shapes are inconsistent; message names the offending axis."""


class NonFiniteError(SignAdvError, ArithmeticError):
    """A NaN or Inf showed up where finite values are required."""


class ValidationError(SignAdvError, ValueError):
    """An input violates a documented precondition or config invariant."""


class WeightFormatError(SignAdvError, IOError):
    """A weight/tensor file is malformed (bad magic, truncation, mismatch)."""


class DivergenceError(SignAdvError, ArithmeticError):
    """An iterative procedure produced a non-finite loss."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class PremiseError(SignAdvError, RuntimeError):
    """The run's premise does not hold (e.g. clean input already misclassified)."""
