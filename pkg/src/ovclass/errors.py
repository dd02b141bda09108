"""Exception hierarchy shared across the package.

Validation failures (bad inputs, malformed files, incompatible shapes) derive
from :class:`ValidationError` so the CLI can map them to exit code 1, while
genuine I/O failures surface as ``OSError`` and map to exit code 2.
"""


class OvClassError(Exception):
    """Base class for all package errors."""


class ValidationError(OvClassError):
    """Input data violates a documented precondition or invariant."""


class ShapeError(ValidationError):
    """Tensor shapes are structurally incompatible for an operation."""


class NonFiniteError(OvClassError):
    """A numeric primitive produced NaN or infinity."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite values produced by primitive '{op}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ConfigError(ValidationError):
    """A configuration value is missing, unknown, or inconsistent."""


class BankFormatError(ValidationError):
    """A bank file does not match the expected binary format."""


class BankCorruptionError(BankFormatError):
    """A bank file is structurally valid up to a point, then truncated or
    internally inconsistent."""


class DegenerateInputError(ValidationError):
    """An input is mathematically degenerate (zero vector where a direction
    is required, antipodal fusion collapse, ...)."""
