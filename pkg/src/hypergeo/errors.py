"""Exception hierarchy.

Validation errors map to CLI exit code 2, numerical faults to exit code 3.
"""


class HypergeoError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 2


class ValidationError(HypergeoError, ValueError):
    """Input violates a documented precondition."""


class CurvatureMismatchError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    pass


class InvalidInputError(ValidationError):
    pass


class EmptyInputError(ValidationError):
    pass


class InsufficientPointsError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class FormatError(ValidationError):
    """Malformed or version-incompatible dataset / checkpoint file."""


class TapeError(HypergeoError, RuntimeError):
    """Backward called on a detached or already consumed tape."""


class NumericalFaultError(HypergeoError, ArithmeticError):
    """A computation produced NaN or inf.

    ``where`` names the offending primitive or training step.
    """

    exit_code = 3

    def __init__(self, where, message=None):
        self.where = where
        super().__init__(message or f"non-finite value produced in {where}")
