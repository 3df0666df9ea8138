"""Exception taxonomy shared across the package.

Each class marks one failure family; the CLI maps them onto its exit-code
contract (usage 1, data/config 2, numeric 3).
"""


class ParameterDomainError(ValueError):
    """A parameter or hyperparameter violates its documented domain."""


class CapacityError(RuntimeError):
    """An enumeration oracle was asked to exceed its configured cap."""


class NumericStateError(ArithmeticError):
    """A numeric invariant broke mid-computation (non-SPD matrix, NaN, overflow)."""


class DataParseError(ValueError):
    """A dataset file could not be parsed; message carries the 1-based line."""


class ConfigError(ValueError):
    """A configuration document is invalid; message names the field."""


class ModelFormatError(ValueError):
    """A model file is missing, malformed, or of an unsupported version."""
