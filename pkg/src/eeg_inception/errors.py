"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: :class:`DataError` -> 2,
:class:`NumericError` -> 3.
"""


class EegInceptionError(Exception):
    """Base class for every error raised deliberately by this package."""


class DataError(EegInceptionError, ValueError):
    """Malformed, missing or inconsistent input data."""


class CorruptManifestError(DataError):
    pass


class VersionMismatchError(DataError):
    pass


class NaNPayloadError(DataError):
    pass


class ModelFormatError(DataError):
    """Base for problems reading a serialized model."""


class TruncatedModelError(ModelFormatError):
    pass


class ShapeMismatchError(ModelFormatError):
    pass


class NumericError(EegInceptionError, ArithmeticError):
    """Non-finite values surfaced by training or optimisation."""
