"""Exception and warning types shared across the package."""


class DncitError(Exception):
    """Base class for all package errors."""


class RowMismatch(DncitError):
    """Input blocks have differing row counts, or ids failed to match."""


class NonNumeric(DncitError):
    """A cell that must be numeric could not be parsed as a number."""


class EmptyInput(DncitError):
    """Fewer rows than the minimum the operation supports."""


class DimMismatch(DncitError):
    """Operands have incompatible dimensions."""


class KTooLarge(DncitError):
    """Requested neighbor count exceeds what the sample admits."""


class DegenerateY(DncitError):
    """Outcome has zero variance after standardization."""


class DegenerateDenominator(DncitError):
    """Ratio statistic denominator is numerically zero (features are
    nearly a function of the conditioning set)."""


class TooFewRows(DncitError):
    """Not enough rows to fit the requested model."""


class MissingColumn(DncitError):
    """A required column role is absent from the input."""


class UnsupportedDim(DncitError):
    """Configuration dimension outside the supported roster."""


class NonPositive(DncitError):
    """Argument must be strictly positive."""


class SchemaError(DncitError):
    """A JSON document failed schema validation; message names the key."""


class RankDeficientWarning(UserWarning):
    """Collinear columns were dropped or fewer components were returned."""


class SingularBasisWarning(UserWarning):
    """Collinear basis columns were dropped before a penalized fit."""
