"""Exception hierarchy shared by all modules."""


class GuidedBridgeError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GuidedBridgeError, ValueError):
    pass


class DivergenceError(GuidedBridgeError, FloatingPointError):
    """A simulated path left the finite domain.

    Attributes
    ----------
    step : int
        Index of the first step at which the state was non-finite or exceeded
        the divergence radius.
    """

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class NumericError(GuidedBridgeError, ArithmeticError):
    """Eigensolver or linear solver failure."""


class DegenerateEnsembleError(GuidedBridgeError, ValueError):
    pass


class RangeError(GuidedBridgeError, ValueError):
    pass


class ConfigError(GuidedBridgeError, ValueError):
    pass


class SchemaError(GuidedBridgeError, ValueError):
    pass
