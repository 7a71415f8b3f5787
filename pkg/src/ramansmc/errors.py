"""Exception hierarchy shared across the package."""


class RamanSMCError(Exception):
    """Base class for all package errors."""


class DomainError(RamanSMCError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(RamanSMCError, ValueError):
    """Invalid configuration (prior file, sampler settings, basis setup)."""


class InputDataError(RamanSMCError, ValueError):
    """Malformed input data such as a ragged or non-monotone spectra file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(RamanSMCError, ArithmeticError):
    """A numerical routine failed (non-finite likelihood, indefinite matrix)."""


class StateError(RamanSMCError, RuntimeError):
    """An object was used in a state that does not support the operation."""


class ArchiveError(RamanSMCError, IOError):
    """A particle archive is unreadable or has an unsupported version."""
