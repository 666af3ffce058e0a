"""Exception hierarchy shared by all modules."""


class EvoMRCError(Exception):
    """Base class for errors raised by this package."""


class InputError(EvoMRCError, ValueError):
    """Malformed or out-of-range user input (shapes, labels, files)."""


class ConfigError(EvoMRCError, ValueError):
    """Invalid configuration value or unsupported setting."""


class ContractError(EvoMRCError, ValueError):
    """A recursion was called with inconsistent task indices or horizons."""


class NumericalError(EvoMRCError, ArithmeticError):
    """Non-finite values appeared during an iterative computation."""
