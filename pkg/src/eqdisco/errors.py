"""Exception types shared across the toolkit."""


class EqDiscoError(Exception):
    """Base class for all toolkit errors."""


class LoadError(EqDiscoError):
    """A data file or column could not be read."""


class ParseError(EqDiscoError):
    """A cell could not be parsed as a number."""


class ValidationError(EqDiscoError):
    """Input data violates a structural requirement."""


class ConfigError(EqDiscoError):
    """A configuration key or value is invalid."""


class StencilError(EqDiscoError):
    """The grid is too short for the requested differentiation stencil."""


class EvaluationError(EqDiscoError):
    """A token or term could not be evaluated on the data."""


class SingularityError(EvaluationError):
    """An inverse-coordinate token hit a zero grid value."""


class NumericError(EqDiscoError):
    """Non-finite values entered a numerical routine."""


class ConvergenceError(EqDiscoError):
    """An iterative solver failed to converge.

    Carries the last iterate for diagnostics.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class DegenerateEquationError(EqDiscoError):
    """An equation has too few terms to be fitted."""


class InsufficientDataError(EqDiscoError):
    """Not enough rows to learn a model."""


class SamplingError(EqDiscoError):
    """Rejection sampling exhausted its attempt budget."""


class StiffnessError(EqDiscoError):
    """Adaptive integration drove the step size below the underflow limit."""


class DivergenceError(EqDiscoError):
    """Integration produced non-finite state values."""

    def __init__(self, message, last_good_time=None):
        super().__init__(message)
        self.last_good_time = last_good_time


class ContractError(EqDiscoError):
    """An internal precondition was violated by the caller."""
