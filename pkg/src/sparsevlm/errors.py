"""Exception hierarchy shared by every module."""


class SparseVlmError(Exception):
    """Base class for all package errors."""


class DimensionError(SparseVlmError, ValueError):
    """Operand shapes do not line up."""


class DomainError(SparseVlmError, ValueError):
    """Input lies outside the mathematical domain of an operation."""


class InputError(SparseVlmError, ValueError):
    """Malformed or out-of-range argument."""


class StateError(SparseVlmError, RuntimeError):
    """Object is in the wrong state for the requested call."""


class FormatError(SparseVlmError, ValueError):
    """A checkpoint or dataset container could not be decoded."""


class ConfigError(InputError):
    """A run configuration failed validation."""
