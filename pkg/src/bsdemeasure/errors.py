"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument is outside the documented domain of an operation."""


class DomainError(InvalidArgument):
    """A closed form was evaluated outside its region of validity."""


class DivergingMomentError(ArithmeticError):
    """An exponential moment estimate keeps growing with the sample size."""


class ImportanceDegeneracyError(RuntimeError):
    """Importance weights collapsed onto too few paths."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class NonConvergenceError(RuntimeError):
    """The fixed-point iteration stopped contracting."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []
