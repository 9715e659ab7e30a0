"""Exception types shared across the package."""


class WiocError(Exception):
    pass


class InvalidInputError(WiocError, ValueError):
    """Arguments violate an operation's preconditions."""


class UnsupportedModeError(InvalidInputError):
    """The request falls outside the supported operating mode."""


class PreconditionError(WiocError):
    """A required state (e.g. a converged inner solve) does not hold."""


class NumericError(WiocError, ArithmeticError):
    """Non-finite values or a diverging iteration."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(WiocError, ValueError):
    pass
