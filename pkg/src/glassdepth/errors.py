"""Shared exception types.

Exit-code mapping used by the CLI: UsageError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class GlassDepthError(Exception):
    pass


class UsageError(GlassDepthError):
    """Bad flags, bad config keys, mismatched command/checkpoint."""


class DataError(GlassDepthError):
    """Missing/corrupt files, manifest violations, empty masks."""


class NumericalError(GlassDepthError):
    """NaN/Inf where finite values are required, non-convergence."""


class ShapeError(GlassDepthError):
    """Operand shapes do not conform for the requested operation."""
