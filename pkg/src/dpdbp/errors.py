"""Exception hierarchy shared by every module."""


class DpdError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(DpdError, ValueError):
    """A parameter vector violates its model's constraints."""


class DomainError(DpdError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(DpdError, ArithmeticError):
    """A computation produced a non-finite value."""


class ConfigError(DpdError):
    """Malformed experiment configuration.

    ``key`` carries the dotted path of the offending entry, e.g.
    ``model.design.path``.
    """

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
