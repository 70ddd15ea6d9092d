"""Exception hierarchy and checked linear-algebra helpers."""

import numpy as np
from scipy import linalg


class PtfaError(Exception):
    """Base class for every error raised by targeted_factors."""


class InvalidConfig(PtfaError, ValueError):
    """Raised when a configuration fails validation."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("Invalid configuration: " + "; ".join(problems))


class DimensionMismatch(PtfaError, ValueError):
    """Raised when array shapes disagree."""


class MissingValues(PtfaError, ValueError):
    """Raised when an operation needing complete data sees missing entries."""


class ConstantColumn(PtfaError, ValueError):
    """Raised when a column has zero standard deviation over its observed entries."""

    def __init__(self, block: str, column: int):
        self.block = block
        self.column = column
        super().__init__(f"Column {column} of {block} is constant over its observed entries")


class AllMissingColumn(PtfaError, ValueError):
    """Raised when a column has no observed entries."""

    def __init__(self, block: str, column: int):
        self.block = block
        self.column = column
        super().__init__(f"Column {column} of {block} has no observed entries")


class SingularModelCovariance(PtfaError, ArithmeticError):
    """Raised when the model covariance L V_F L' + Sigma cannot be factorized."""


class SingularMatrix(PtfaError, ArithmeticError):
    """Raised when a matrix that must be inverted is singular."""


class SingularPrecision(SingularMatrix):
    """Posterior precision is not invertible."""


class SingularV(SingularMatrix):
    """Second-moment matrix V is rank deficient (k too large or degenerate posterior)."""


class SingularBlockSum(SingularMatrix):
    """Summed mixed-frequency second-moment blocks are not invertible."""


class SingularLagMoment(SingularMatrix):
    """Lagged factor second moment is not invertible."""


class NotPositiveDefinite(PtfaError, ArithmeticError):
    """Raised when a block-banded matrix fails Cholesky factorization."""

    def __init__(self, block: int, message: str = ""):
        self.block = block
        detail = f": {message}" if message else ""
        super().__init__(f"Matrix is not positive definite at block {block}{detail}")


class DegenerateInit(PtfaError, ArithmeticError):
    """Raised when the starting values give a non-finite posterior or likelihood."""


class ZeroWeightVector(PtfaError, ArithmeticError):
    """Raised when a NIPALS component has a zero weight vector."""

    def __init__(self, component: int):
        self.component = component
        super().__init__(f"NIPALS weight vector vanished at component {component}")


class RankDeficientScores(PtfaError, ArithmeticError):
    """Raised when principal-component scores are rank deficient."""


class NegativeVarianceGap(PtfaError, ArithmeticError):
    """Raised when a retained PPCA eigenvalue does not exceed the noise variance."""


class ZeroVarianceTarget(PtfaError, ValueError):
    """Raised when R-squared is requested for a target with zero variance."""

    def __init__(self, column: int):
        self.column = column
        super().__init__(f"Target column {column} has zero variance")


class InsufficientData(PtfaError, ValueError):
    """Raised when a panel is too short for the requested evaluation."""


class MalformedCsv(PtfaError, ValueError):
    """Raised when an input CSV cannot be interpreted as a numeric panel."""


class NonStationaryDynamicsWarning(UserWarning):
    """Issued when an estimated VAR coefficient has spectral radius >= 1."""


def _check_finite(array: np.ndarray, error: type[PtfaError], message: str) -> np.ndarray:
    """Raise ``error`` if ``array`` holds NaN or infinity."""
    if not np.all(np.isfinite(array)):
        raise error(message)
    return array


def _checked_solve(
    a: np.ndarray,
    b: np.ndarray,
    error: type[SingularMatrix] = SingularMatrix,
    what: str = "matrix",
    assume_a: str = "pos",
) -> np.ndarray:
    """Solve ``a x = b``, translating LinAlgError into ``error``."""
    try:
        x = linalg.solve(a, b, assume_a=assume_a)
    except (linalg.LinAlgError, ValueError) as exc:
        raise error(f"Cannot solve with {what}: {exc}") from exc
    return _check_finite(x, error, f"Solve with {what} produced non-finite values")


def _checked_inverse(a: np.ndarray, error: type[SingularMatrix] = SingularMatrix, what: str = "matrix") -> np.ndarray:
    """Invert a symmetric positive-definite matrix and symmetrize the result."""
    inverse = _checked_solve(a, np.eye(a.shape[0]), error, what)
    return 0.5 * (inverse + inverse.T)
