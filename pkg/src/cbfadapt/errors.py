"""Exception types raised across the package."""


class CbfAdaptError(Exception):
    """Base class for all package errors."""


class DimensionError(CbfAdaptError, ValueError):
    """Vector or matrix length does not match the owning model."""


class InvalidParameterError(CbfAdaptError, ValueError):
    """A class-K gain or config value violates its positivity/schedule invariant."""


class InvalidInputError(CbfAdaptError, ValueError):
    """A control input lies outside the admissible input box."""


class OutOfSetError(CbfAdaptError, ValueError):
    """A state lies outside the set required by an operation's precondition."""


class EvaluationError(CbfAdaptError, ArithmeticError):
    """A barrier, gradient or network evaluation produced a non-finite value."""


class IntegrationError(CbfAdaptError, ArithmeticError):
    """A simulation step produced a non-finite state."""


class ModelFormatError(CbfAdaptError, ValueError):
    """A serialized ensemble model could not be parsed."""


class TrainingError(CbfAdaptError, RuntimeError):
    """Ensemble training diverged or was given unusable data."""
