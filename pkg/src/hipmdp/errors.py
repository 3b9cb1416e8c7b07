"""Exception hierarchy shared by all modules."""


class HipMdpError(Exception):
    """Base class for package errors."""


class InvalidInputError(HipMdpError, ValueError):
    """Arguments violate an operation's preconditions."""


class NumericalError(HipMdpError, ArithmeticError):
    """A linear system could not be factorized even after jitter."""


class ModelFormatError(HipMdpError):
    """A model file is unreadable, malformed, or violates model invariants."""


class ConfigError(HipMdpError):
    """An experiment configuration is missing or invalid."""
