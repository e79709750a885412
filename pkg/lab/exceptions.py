# lab/exceptions.py


class LabError(Exception):
    """Base class for every error raised by the laboratory."""


class InvalidParameter(LabError, ValueError):
    """A precondition on an operation's arguments does not hold."""


class IntegrationError(LabError, ArithmeticError):
    """A pathwise integral cannot be evaluated (singular or non-finite)."""

    def __init__(self, message: str, code: str = "nonfinite"):
        super().__init__(message)
        self.code = code


class ConfigError(LabError):
    """An experiment configuration does not validate."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
