"""Exception hierarchy shared across the package."""


class BanditError(Exception):
    """Base class for all package-specific failures."""


class DimensionError(BanditError):
    """Array shapes do not match what an operation requires."""


class NumericError(BanditError):
    """A computation produced non-finite or numerically invalid values."""


class DivergedError(NumericError):
    """Gradient descent hit a non-finite loss; carries the iteration index."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"training diverged at iteration {iteration}")


class EmptyHistoryError(BanditError):
    """An operation needing observations was handed an empty history."""


class DataFormatError(BanditError):
    """A binary dataset file violates its format contract."""


class RankError(NumericError):
    """A matrix is rank-deficient where full column rank is required."""
