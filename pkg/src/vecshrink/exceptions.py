"""Exception and warning types raised across the package."""


class VecShrinkError(Exception):
    """Base class for all package errors."""


class FormatError(VecShrinkError, ValueError):
    """A file header or payload does not match the expected layout."""


class DimensionMismatchError(VecShrinkError, ValueError):
    """Two collections (or a collection and a model) disagree on dimension."""


class UnknownIdError(VecShrinkError, KeyError):
    """A relevance judgment names a query or document id that does not exist."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown id"


class NonFiniteError(VecShrinkError, ValueError):
    """An embedding contains NaN or infinite values."""


class EmptyCollectionError(VecShrinkError, ValueError):
    """An operation received a collection with no rows."""


class DuplicateIdError(VecShrinkError, ValueError):
    """Item ids inside a single matrix are not unique."""


class MissingJudgmentsError(VecShrinkError, ValueError):
    """A scored query has no relevance judgments."""


class ZeroVarianceError(VecShrinkError, ValueError):
    """A correlation is undefined because one side has zero variance."""


class DivergenceError(VecShrinkError, FloatingPointError):
    """Autoencoder training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (non-finite loss) at epoch {epoch}")


class QuantizationOverflowError(VecShrinkError, OverflowError):
    """A value does not fit the target number format."""

    def __init__(self, row, message=None):
        self.row = row
        super().__init__(message or f"row {row} overflows half precision")


class ConfigError(VecShrinkError, ValueError):
    """Invalid experiment configuration.

    ``field`` is ``section.key`` and ``line`` the 1-based line in the config
    file when known.
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(field)
        if line:
            where.append(f"line {line}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ZeroVectorWarning(UserWarning):
    """Normalization met all-zero rows; they were left as zeros."""

    def __init__(self, count):
        self.count = count
        super().__init__(f"{count} zero row(s) left unnormalized")
