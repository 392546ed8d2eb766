"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
"""


class KanFactorError(Exception):
    """Base class for all package errors."""


class ShapeError(KanFactorError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class DataError(KanFactorError, ValueError):
    """Panel input violates the expected schema or invariants."""


class SchemaError(DataError):
    """A panel file does not match the documented CSV/metadata schema."""


class DuplicateKeyError(DataError):
    """The same (date, asset_id) pair appears more than once."""


class PlanError(DataError):
    """A backtest plan is inconsistent with the panel it is applied to."""


class NumericError(KanFactorError, ArithmeticError):
    """Numerical failure: factorization breakdown, divergence, degeneracy."""


class NonSpdError(NumericError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, pivot_index: int, pivot: float):
        self.pivot_index = pivot_index
        self.pivot = pivot
        super().__init__(
            f"matrix is not positive definite: Cholesky pivot {pivot:.6e} "
            f"at index {pivot_index}"
        )


class RankDeficiencyError(NumericError):
    """Normal equations are singular; regularization is required."""


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss."""


class DegenerateSeriesError(NumericError):
    """A return series has no variation (or no mass) to form a statistic."""
