"""Exception types shared across the package.

The CLI maps these onto distinct process exit codes, so keep the
hierarchy shallow: anything wrong with the *content* of a file is a
FileFormatError, anything wrong with array *dimensions* is a
ShapeMismatchError, and numerical blow-ups are NonFiniteError.
"""


class SwmparcError(Exception):
    """Base class for errors raised by this package."""


class FileFormatError(SwmparcError):
    """A file exists but its content violates the expected format."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(FileFormatError):
    """File declares a format version this build does not read."""


class TruncatedFileError(FileFormatError):
    """File ended before the declared payload was complete."""


class ShapeMismatchError(SwmparcError):
    """Array dimensions disagree with what the operation requires."""


class NonFiniteError(SwmparcError):
    """NaN or infinity appeared where finite values are required."""


class GenerationError(SwmparcError):
    """Synthetic data generation could not satisfy its constraints."""
