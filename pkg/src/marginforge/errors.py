"""Exception types shared across the package."""


class MarginForgeError(Exception):
    """Base class for all package errors."""


class DimMismatchError(MarginForgeError):
    """Operands have incompatible dimensions."""


class ShapeMismatchError(MarginForgeError):
    """Array shapes disagree with the expected layout."""


class ZeroNormError(MarginForgeError):
    """A vector with (near-)zero norm reached a cosine computation."""


class EmptyInputError(MarginForgeError):
    """An operation that needs at least one element got none."""


class IndexOutOfRangeError(MarginForgeError):
    """An index falls outside the valid range."""


class LambdaOutOfRangeError(MarginForgeError):
    """The DSE/SSE blending weight must lie in [0, 1]."""


class NonSquareError(MarginForgeError):
    """A square matrix was required."""


class ParseError(MarginForgeError):
    """A text file does not conform to its declared format."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateIdError(MarginForgeError):
    """The same item id appears more than once."""


class UnknownIdError(MarginForgeError):
    """An item id is absent from the table it was looked up in."""


class ChecksumError(MarginForgeError):
    """Stored checksum does not match the file contents."""


class ConfigError(MarginForgeError):
    """A configuration value or combination is invalid."""


class UnknownKeyError(ConfigError):
    """A config file contains a key that is not recognized."""


class ConfigTypeError(ConfigError):
    """A config value cannot be converted to, or violates, its declared type."""


class MissingKeyError(ConfigError):
    """A required config key was not provided."""
