"""Exception hierarchy shared by all modules."""


class HJBError(Exception):
    """Base class for errors raised by this package."""


class DomainError(HJBError, ValueError):
    """An argument lies outside the set where an operation is defined."""


class EvaluationError(HJBError, ArithmeticError):
    """A user-supplied evaluator returned a non-finite value."""


class ModelViolationError(HJBError, ValueError):
    """Problem data violate a standing assumption (e.g. a negative running cost)."""


class RecessionUndefinedError(HJBError, ArithmeticError):
    """The recession limit could not be established numerically."""


class ConfigurationError(HJBError, ValueError):
    """Inconsistent solver, grid or mesh configuration."""


class NonInvertibleTimeError(HJBError, ValueError):
    """The extended-to-ordinary time change cannot be inverted."""


class PreconditionError(HJBError, RuntimeError):
    """An operation was called before its inputs were available."""


class BudgetExceededError(HJBError, RuntimeError):
    """An enumeration would exceed its configured budget."""

    def __init__(self, message, required):
        super().__init__(message)
        self.required = required


class SpecError(HJBError, ValueError):
    """A problem-spec or certificate-spec document is malformed.

    ``diagnostics`` holds ``(location, message)`` pairs; a location reads
    ``line N, field a.b[0]`` when the line is known.
    """

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)
