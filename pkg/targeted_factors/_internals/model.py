"""Shared data model: panels, parameters, likelihood, prediction and fit diagnostics."""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg
from sklearn.metrics import r2_score

from targeted_factors._internals.errors import (
    AllMissingColumn,
    ConstantColumn,
    DimensionMismatch,
    MissingValues,
    PtfaError,
    SingularModelCovariance,
    SingularPrecision,
    ZeroVarianceTarget,
    _checked_inverse,
)

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-10

MissingPolicy = Literal["error", "zero_impute"]


@dataclass(frozen=True)
class Scaler:
    """Per-column moments of the raw data, used to map between raw and standardized scales."""

    mean_x: np.ndarray
    scale_x: np.ndarray
    mean_y: np.ndarray
    scale_y: np.ndarray

    def transform_x(self, raw_X: np.ndarray) -> np.ndarray:
        return (np.asarray(raw_X, dtype=float) - self.mean_x) / self.scale_x

    def transform_y(self, raw_Y: np.ndarray) -> np.ndarray:
        return (np.asarray(raw_Y, dtype=float) - self.mean_y) / self.scale_y

    def inverse_x(self, X: np.ndarray) -> np.ndarray:
        return X * self.scale_x + self.mean_x

    def inverse_y(self, Y: np.ndarray) -> np.ndarray:
        return Y * self.scale_y + self.mean_y


@dataclass(frozen=True)
class DataPanel:
    """
    Standardized features and targets with their missingness masks.

    Masked cells hold NaN until an imputation policy fills them; masks stay
    authoritative either way.
    """

    X: np.ndarray
    Y: np.ndarray
    mask_x: np.ndarray
    mask_y: np.ndarray
    scaler: Scaler

    def __post_init__(self):
        if self.X.ndim != 2 or self.Y.ndim != 2:
            raise DimensionMismatch("X and Y must be two-dimensional")
        if self.X.shape[0] != self.Y.shape[0]:
            raise DimensionMismatch(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if self.mask_x.shape != self.X.shape or self.mask_y.shape != self.Y.shape:
            raise DimensionMismatch("Masks must match the shapes of X and Y")
        if self.X.shape[0] < 2 or self.X.shape[1] < 1 or self.Y.shape[1] < 1:
            raise DimensionMismatch("A panel needs T >= 2, p >= 1 and q >= 1")

    @property
    def T(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    @property
    def Z(self) -> np.ndarray:
        """Stacked data [X, Y]."""
        return np.hstack([self.X, self.Y])

    @property
    def has_missing(self) -> bool:
        return bool(self.mask_x.any() or self.mask_y.any())

    def with_values(self, X: np.ndarray, Y: np.ndarray) -> "DataPanel":
        """Same masks and scaler, new values."""
        return dataclasses.replace(self, X=X, Y=Y)

    def without_masks(self) -> "DataPanel":
        """Treat the current (imputed) values as fully observed."""
        if np.isnan(self.X).any() or np.isnan(self.Y).any():
            raise MissingValues("Cannot drop masks while NaN placeholders remain")
        return dataclasses.replace(
            self,
            mask_x=np.zeros_like(self.mask_x),
            mask_y=np.zeros_like(self.mask_y),
        )


@dataclass(frozen=True)
class FactorParams:
    """Loadings, isotropic noise variances and factor prior variance."""

    P: np.ndarray
    Q: np.ndarray
    sigma2_x: float
    sigma2_y: float
    V_F: np.ndarray = None

    def __post_init__(self):
        if self.P.ndim != 2 or self.Q.ndim != 2 or self.P.shape[1] != self.Q.shape[1]:
            raise DimensionMismatch("P and Q must be matrices with the same number of columns")
        if self.V_F is None:
            object.__setattr__(self, "V_F", np.eye(self.P.shape[1]))
        if self.V_F.shape != (self.k, self.k):
            raise DimensionMismatch(f"V_F must be {self.k}x{self.k}")
        if not (self.sigma2_x > 0 and self.sigma2_y > 0):
            raise PtfaError("Noise variances must be positive")
        if not np.allclose(self.V_F, self.V_F.T, atol=1e-12):
            raise PtfaError("V_F must be symmetric")
        if np.linalg.eigvalsh(self.V_F).min() <= 0:
            raise PtfaError("V_F must be positive definite")

    @property
    def k(self) -> int:
        return self.P.shape[1]

    @property
    def p(self) -> int:
        return self.P.shape[0]

    @property
    def q(self) -> int:
        return self.Q.shape[0]

    @property
    def loadings(self) -> np.ndarray:
        """Stacked loadings L = [P; Q] (d x k)."""
        return np.vstack([self.P, self.Q])

    @property
    def noise_variances(self) -> np.ndarray:
        """Diagonal of Sigma = diag(sigma2_x I_p, sigma2_y I_q)."""
        return np.concatenate([np.full(self.p, self.sigma2_x), np.full(self.q, self.sigma2_y)])

    @property
    def V_F_inv(self) -> np.ndarray:
        return _checked_inverse(self.V_F, SingularPrecision, "V_F")

    def replace(self, **changes) -> "FactorParams":
        return dataclasses.replace(self, **changes)

    def as_vector(self) -> np.ndarray:
        """Stacked parameter vector (vec P, vec Q, sigma2_x, sigma2_y)."""
        return np.concatenate([self.P.ravel(), self.Q.ravel(), [self.sigma2_x, self.sigma2_y]])

    def model_covariance(self) -> np.ndarray:
        """C = L V_F L' + Sigma."""
        L = self.loadings
        return L @ self.V_F @ L.T + np.diag(self.noise_variances)


@dataclass(frozen=True)
class PosteriorMoments:
    """Factor posterior mean M, covariance Omega (k x k or per period) and V = E[F'F]."""

    M: np.ndarray
    Omega: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class FitResult:
    """Outcome of an EM run."""

    params: FactorParams
    posterior: PosteriorMoments
    loglik_path: np.ndarray
    n_iter: int
    converged: bool
    foc_residual: float
    change_path: np.ndarray = field(default_factory=lambda: np.empty(0))
    r2_path: np.ndarray = field(default_factory=lambda: np.empty(0))
    stop_reason: str = "tolerance"  # tolerance, r2_plateau or max_iter

    def fitted(self) -> np.ndarray:
        """In-sample fitted targets M Q' on the standardized scale."""
        return self.posterior.M @ self.params.Q.T


def _column_moments(raw: np.ndarray, observed: np.ndarray, block: str) -> tuple[np.ndarray, np.ndarray]:
    counts = observed.sum(axis=0)
    for j in np.flatnonzero(counts == 0):
        raise AllMissingColumn(block, int(j))
    mean = np.mean(raw, axis=0, where=observed)
    scale = np.std(raw, axis=0, where=observed)
    for j in range(raw.shape[1]):
        if not scale[j] > np.finfo(float).eps * max(1.0, abs(mean[j])):
            raise ConstantColumn(block, j)
    return mean, scale


def _as_matrix(raw, name: str) -> np.ndarray:
    array = np.asarray(raw, dtype=float)
    if array.ndim == 1:
        array = array[:, np.newaxis]
    if array.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix")
    return array


def _apply_policy(values: np.ndarray, mask: np.ndarray, missing_policy: MissingPolicy, block: str) -> np.ndarray:
    if not mask.any():
        return values
    if missing_policy == "error":
        raise MissingValues(f"{block} has {int(mask.sum())} missing entries")
    if missing_policy != "zero_impute":
        raise ValueError(f"Unknown missing policy: {missing_policy}")
    return np.where(mask, 0.0, values)


def standardize(raw_X, raw_Y, missing_policy: MissingPolicy = "error") -> DataPanel:
    """
    Center and scale features and targets column by column.

    Moments use the population convention (1/T) over observed entries only.

    Args:
        raw_X: T x p features; NaN marks a missing entry.
        raw_Y: T x q targets; NaN marks a missing entry.
        missing_policy: "error" rejects missing entries, "zero_impute" sets them to 0
            after standardization (the column mean).

    Returns:
        DataPanel on the standardized scale with the raw moments in its scaler.
    """
    raw_X = _as_matrix(raw_X, "raw_X")
    raw_Y = _as_matrix(raw_Y, "raw_Y")
    if raw_X.shape[0] != raw_Y.shape[0]:
        raise DimensionMismatch(f"raw_X has {raw_X.shape[0]} rows but raw_Y has {raw_Y.shape[0]}")
    mask_x = np.isnan(raw_X)
    mask_y = np.isnan(raw_Y)
    mean_x, scale_x = _column_moments(raw_X, ~mask_x, "X")
    mean_y, scale_y = _column_moments(raw_Y, ~mask_y, "Y")
    scaler = Scaler(mean_x, scale_x, mean_y, scale_y)
    return apply_scaler(scaler, raw_X, raw_Y, missing_policy)


def apply_scaler(scaler: Scaler, raw_X, raw_Y, missing_policy: MissingPolicy = "error") -> DataPanel:
    """Build a panel from raw data using previously computed moments."""
    raw_X = _as_matrix(raw_X, "raw_X")
    raw_Y = _as_matrix(raw_Y, "raw_Y")
    mask_x = np.isnan(raw_X)
    mask_y = np.isnan(raw_Y)
    X = _apply_policy(scaler.transform_x(raw_X), mask_x, missing_policy, "X")
    Y = _apply_policy(scaler.transform_y(raw_Y), mask_y, missing_policy, "Y")
    return DataPanel(X=X, Y=Y, mask_x=mask_x, mask_y=mask_y, scaler=scaler)


def _require_values(panel: DataPanel) -> None:
    if np.isnan(panel.X).any() or np.isnan(panel.Y).any():
        raise MissingValues("Likelihood evaluation needs a panel without NaN entries")


def _factor_model_covariance(params: FactorParams) -> tuple[np.ndarray, bool]:
    try:
        return linalg.cho_factor(params.model_covariance(), lower=True)
    except linalg.LinAlgError as exc:
        raise SingularModelCovariance(f"Model covariance is not positive definite: {exc}") from exc


def marginal_log_likelihood(params: FactorParams, panel: DataPanel) -> float:
    """Observed-data log-likelihood with the factors integrated out."""
    _require_values(panel)
    Z = panel.Z
    T, d = Z.shape
    if d != params.p + params.q:
        raise DimensionMismatch("Panel and parameters disagree on p + q")
    factor = _factor_model_covariance(params)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    S = Z.T @ Z / T
    trace = np.trace(linalg.cho_solve(factor, S))
    return float(-0.5 * T * (d * np.log(2.0 * np.pi) + logdet + trace))


def mle_foc_residual(params: FactorParams, panel: DataPanel) -> float:
    """Frobenius norm of (S C^-1 - I) L, zero at any stationary point of the likelihood."""
    _require_values(panel)
    Z = panel.Z
    T, d = Z.shape
    factor = _factor_model_covariance(params)
    S = Z.T @ Z / T
    # S C^-1 = (C^-1 S)' since both are symmetric
    S_C_inv = linalg.cho_solve(factor, S).T
    residual = (S_C_inv - np.eye(d)) @ params.loadings
    return float(np.linalg.norm(residual, "fro"))


def feature_posterior(params: FactorParams, X_new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Factor posterior given features only: (means n x k, covariance k x k)."""
    X_new = _as_matrix(X_new, "X_new")
    if X_new.shape[1] != params.p:
        raise DimensionMismatch(f"X_new has {X_new.shape[1]} columns, expected {params.p}")
    P_scaled = params.P / params.sigma2_x
    Omega_X = _checked_inverse(params.V_F_inv + params.P.T @ P_scaled, SingularPrecision, "feature precision")
    return X_new @ P_scaled @ Omega_X, Omega_X


def predict_targets(params: FactorParams, X_new: np.ndarray) -> np.ndarray:
    """Standardized target prediction from standardized features: E[f | x] Q'."""
    means, _ = feature_posterior(params, X_new)
    return means @ params.Q.T


def predict_targets_raw(params: FactorParams, raw_X_new: np.ndarray, scaler: Scaler) -> np.ndarray:
    """Prediction on the raw target scale from raw features."""
    return scaler.inverse_y(predict_targets(params, scaler.transform_x(_as_matrix(raw_X_new, "raw_X_new"))))


def predictive_covariance(params: FactorParams) -> np.ndarray:
    """Covariance of a target vector given its features: sigma2_y I + Q Omega_X Q'."""
    _, Omega_X = feature_posterior(params, np.zeros((1, params.p)))
    return params.sigma2_y * np.eye(params.q) + params.Q @ Omega_X @ params.Q.T


def r_squared(Y: np.ndarray, Y_hat: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-target and average coefficient of determination."""
    Y = _as_matrix(Y, "Y")
    Y_hat = _as_matrix(Y_hat, "Y_hat")
    if Y.shape != Y_hat.shape:
        raise DimensionMismatch(f"Y is {Y.shape} but Y_hat is {Y_hat.shape}")
    total = np.sum((Y - Y.mean(axis=0)) ** 2, axis=0)
    for j in np.flatnonzero(total <= 0.0):
        raise ZeroVarianceTarget(int(j))
    per_target = r2_score(Y, Y_hat, multioutput="raw_values")
    return per_target, float(np.mean(per_target))


def initial_params(p: int, q: int, k: int, seed=None, V_F: np.ndarray | None = None) -> FactorParams:
    """Seeded starting values: N(0, 1/k) loadings and unit noise variances."""
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((p, k)) / np.sqrt(k)
    Q = rng.standard_normal((q, k)) / np.sqrt(k)
    return FactorParams(P=P, Q=Q, sigma2_x=1.0, sigma2_y=1.0, V_F=None if V_F is None else np.asarray(V_F, dtype=float))


def parameter_change(old: FactorParams, new: FactorParams) -> float:
    """Euclidean norm of the change in the stacked parameter vector."""
    return float(np.linalg.norm(new.as_vector() - old.as_vector()))
