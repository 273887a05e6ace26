"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class ContractViolationError(RuntimeError):
    """An operation was called in a state its contract forbids."""


class GenerationError(RuntimeError):
    """Map generation exhausted its retry budget."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where the numerics contract forbids it."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
