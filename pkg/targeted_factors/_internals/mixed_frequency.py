"""EM for high-frequency features and low-frequency targets linked by period averaging."""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from targeted_factors._internals.em_missing import check_observed_columns
from targeted_factors._internals.em_static import (
    EmConfig,
    IterationTrace,
    _require_valid,
    starting_params,
)
from targeted_factors._internals.errors import (
    DegenerateInit,
    DimensionMismatch,
    SingularBlockSum,
    SingularPrecision,
    _check_finite,
    _checked_inverse,
    _checked_solve,
)
from targeted_factors._internals.model import (
    VARIANCE_FLOOR,
    FactorParams,
    FitResult,
    MissingPolicy,
    PosteriorMoments,
    Scaler,
    _apply_policy,
    _as_matrix,
    _column_moments,
    parameter_change,
)

logger = logging.getLogger(__name__)


def as_ratios(ratios, T: int) -> np.ndarray:
    """Broadcast a single ratio or validate a length-T vector of per-period ratios."""
    ratios = np.asarray(ratios)
    if ratios.ndim == 0:
        ratios = np.full(T, int(ratios))
    if ratios.shape != (T,):
        raise DimensionMismatch(f"Expected {T} period ratios, got shape {ratios.shape}")
    if not np.issubdtype(ratios.dtype, np.integer):
        if not np.all(ratios == np.round(ratios)):
            raise DimensionMismatch("Period ratios must be integers")
        ratios = ratios.astype(int)
    if np.any(ratios < 1):
        raise DimensionMismatch("Period ratios must be at least 1")
    return ratios


@dataclass(frozen=True)
class MixedFrequencyPanel:
    """
    Standardized high-frequency features with low-frequency targets.

    Period t covers ratios[t] consecutive rows of X_hf.
    """

    X_hf: np.ndarray  # (N, p), N = ratios.sum()
    Y: np.ndarray  # (T, q)
    ratios: np.ndarray  # (T,)
    mask_x: np.ndarray
    mask_y: np.ndarray
    scaler: Scaler

    def __post_init__(self):
        if self.ratios.shape != (self.Y.shape[0],):
            raise DimensionMismatch("One ratio per low-frequency period is required")
        if int(self.ratios.sum()) != self.X_hf.shape[0]:
            raise DimensionMismatch(
                f"X_hf has {self.X_hf.shape[0]} rows but the ratios sum to {int(self.ratios.sum())}"
            )
        if self.mask_x.shape != self.X_hf.shape or self.mask_y.shape != self.Y.shape:
            raise DimensionMismatch("Masks must match the shapes of X_hf and Y")
        if self.T < 2:
            raise DimensionMismatch("A panel needs T >= 2")

    @property
    def T(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.X_hf.shape[0]

    @property
    def p(self) -> int:
        return self.X_hf.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    @property
    def ratio(self) -> int | None:
        """The common ratio when every period has the same length."""
        return int(self.ratios[0]) if np.all(self.ratios == self.ratios[0]) else None

    @property
    def has_missing(self) -> bool:
        return bool(self.mask_x.any() or self.mask_y.any())

    @cached_property
    def starts(self) -> np.ndarray:
        """Row index in X_hf where each period starts."""
        return np.concatenate([[0], np.cumsum(self.ratios)[:-1]])

    def period_mean(self, values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(values, self.starts, axis=0) / self.ratios[:, np.newaxis]

    def reshaped(self) -> np.ndarray:
        """Features as a T x (pL) matrix with the L high-frequency blocks side by side."""
        if self.ratio is None:
            raise DimensionMismatch("Reshaping needs a common ratio")
        return self.X_hf.reshape(self.T, self.ratio * self.p)

    def with_values(self, X_hf: np.ndarray, Y: np.ndarray) -> "MixedFrequencyPanel":
        return MixedFrequencyPanel(X_hf, Y, self.ratios, self.mask_x, self.mask_y, self.scaler)


def standardize_mixed(raw_X_hf, raw_Y, ratios, missing_policy: MissingPolicy = "error") -> MixedFrequencyPanel:
    """Standardize each high-frequency feature column and each target column on its own rows."""
    raw_X_hf = _as_matrix(raw_X_hf, "raw_X_hf")
    raw_Y = _as_matrix(raw_Y, "raw_Y")
    ratios = as_ratios(ratios, raw_Y.shape[0])
    mask_x = np.isnan(raw_X_hf)
    mask_y = np.isnan(raw_Y)
    mean_x, scale_x = _column_moments(raw_X_hf, ~mask_x, "X")
    mean_y, scale_y = _column_moments(raw_Y, ~mask_y, "Y")
    scaler = Scaler(mean_x, scale_x, mean_y, scale_y)
    X_hf = _apply_policy(scaler.transform_x(raw_X_hf), mask_x, missing_policy, "X")
    Y = _apply_policy(scaler.transform_y(raw_Y), mask_y, missing_policy, "Y")
    return MixedFrequencyPanel(X_hf, Y, ratios, mask_x, mask_y, scaler)


@dataclass(frozen=True)
class MixedFrequencyPosterior:
    """
    Posterior of the high-frequency factors.

    Within a period the precision splits into a deviation part A = V_F^-1 + P'P/sigma2_x and
    a period-average part A + Q'Q/sigma2_y, so the covariance is
    I_L (x) A^-1 + (1/L) 1 1' (x) (C - A^-1) with C = (A + Q'Q/sigma2_y)^-1.
    """

    M_hf: np.ndarray  # (N, k)
    M_sum: np.ndarray  # (T, k) within-period sums
    M_bar: np.ndarray  # (T, k) within-period means
    A_inv: np.ndarray
    C: np.ndarray
    diag_sum: np.ndarray  # sum over blocks V_{l,l}
    all_sum: np.ndarray  # sum over blocks V_{l,r}, scaled by 1/L per period
    ratios: np.ndarray

    def omega(self, ratio: int) -> np.ndarray:
        """Dense (kL) x (kL) posterior covariance of one period with the given ratio."""
        return np.kron(np.eye(ratio), self.A_inv) + np.kron(np.full((ratio, ratio), 1.0 / ratio), self.C - self.A_inv)

    @property
    def M(self) -> np.ndarray:
        """T x (kL) stacked means [m^(1)' ... m^(L)'] for a common ratio."""
        ratio = self._common_ratio()
        return self.M_hf.reshape(self.M_sum.shape[0], ratio * self.C.shape[0])

    @property
    def V(self) -> np.ndarray:
        """T Omega_MF + M'M for a common ratio."""
        M = self.M
        return M.shape[0] * self.omega(self._common_ratio()) + M.T @ M

    def _common_ratio(self) -> int:
        if not np.all(self.ratios == self.ratios[0]):
            raise DimensionMismatch("Stacked moments need a common ratio")
        return int(self.ratios[0])


def mf_posterior(params: FactorParams, panel: MixedFrequencyPanel) -> MixedFrequencyPosterior:
    """Exact posterior moments of the high-frequency factors."""
    if params.p != panel.p or params.q != panel.q:
        raise DimensionMismatch("Panel and parameters disagree on p or q")
    P_scaled = params.P / params.sigma2_x
    Q_scaled = params.Q / params.sigma2_y
    A = params.V_F_inv + params.P.T @ P_scaled
    A_inv = _checked_inverse(A, SingularPrecision, "within-period precision")
    C = _checked_inverse(A + params.Q.T @ Q_scaled, SingularPrecision, "period-average precision")

    X_bar = panel.period_mean(panel.X_hf)
    X_tilde = panel.X_hf - np.repeat(X_bar, panel.ratios, axis=0)
    M_low = (X_bar @ P_scaled + panel.Y @ Q_scaled) @ C
    M_hf = X_tilde @ P_scaled @ A_inv + np.repeat(M_low, panel.ratios, axis=0)
    M_sum = np.add.reduceat(M_hf, panel.starts, axis=0)
    M_bar = M_sum / panel.ratios[:, np.newaxis]
    diag_sum = (panel.N - panel.T) * A_inv + panel.T * C + M_hf.T @ M_hf
    all_sum = panel.T * C + M_sum.T @ M_bar
    return MixedFrequencyPosterior(M_hf, M_sum, M_bar, A_inv, C, diag_sum, all_sum, panel.ratios)


def mf_update_loadings(panel: MixedFrequencyPanel, posterior: MixedFrequencyPosterior) -> tuple[np.ndarray, np.ndarray]:
    """P from the summed diagonal blocks; Q from the summed blocks of the period averages."""
    P = _checked_solve(posterior.diag_sum, posterior.M_hf.T @ panel.X_hf, SingularBlockSum, "diagonal block sum").T
    Q = _checked_solve(posterior.all_sum, posterior.M_sum.T @ panel.Y, SingularBlockSum, "full block sum").T
    return P, Q


def mf_update_variances(
    panel: MixedFrequencyPanel, P: np.ndarray, Q: np.ndarray, posterior: MixedFrequencyPosterior
) -> tuple[float, float]:
    sigma2_x = (np.sum(panel.X_hf ** 2) - np.trace(P.T @ P @ posterior.diag_sum)) / (panel.N * panel.p)
    weighted_y = np.sum(panel.Y ** 2 * panel.ratios[:, np.newaxis])
    # the trace form can dip below zero before convergence
    sigma2_y = (weighted_y - np.trace(Q.T @ Q @ posterior.all_sum)) / (panel.T * panel.q)
    return max(float(sigma2_x), VARIANCE_FLOOR), max(float(sigma2_y), VARIANCE_FLOOR)


def mf_impute_step(
    panel: MixedFrequencyPanel, posterior: MixedFrequencyPosterior, P: np.ndarray, Q: np.ndarray
) -> MixedFrequencyPanel:
    """Masked X from the high-frequency fit, masked Y from the period-average fit."""
    if not panel.has_missing:
        return panel
    X_hf = np.where(panel.mask_x, posterior.M_hf @ P.T, panel.X_hf) if panel.mask_x.any() else panel.X_hf
    Y = np.where(panel.mask_y, posterior.M_bar @ Q.T, panel.Y) if panel.mask_y.any() else panel.Y
    return panel.with_values(X_hf, Y)


def fit_mixed_frequency(
    panel: MixedFrequencyPanel, config: EmConfig, init: FactorParams | None = None
) -> FitResult:
    """
    Run mixed-frequency EM.

    The returned posterior describes the period-average factors: means (T x k), their
    per-period covariances C / L_t and V = E[F_bar' F_bar], so ``fitted()`` gives the
    low-frequency fit. The high-frequency factors are available from
    ``mf_posterior(result.params, panel)``.
    The likelihood is not tracked and the first-order residual is reported as NaN.
    """
    check_observed_columns(panel)
    _require_valid(config, panel.p, panel.q, panel.T)
    current = panel.with_values(
        np.where(panel.mask_x, 0.0, panel.X_hf), np.where(panel.mask_y, 0.0, panel.Y)
    )
    params = starting_params(config, panel.p, panel.q, init)
    trace = IterationTrace(config, "PTFA-MF")

    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        posterior = mf_posterior(params, current)
        if iteration == 1:
            _check_finite(posterior.M_hf, DegenerateInit, "Initial posterior mean is not finite")
        current = mf_impute_step(current, posterior, params.P, params.Q)
        P, Q = mf_update_loadings(current, posterior)
        sigma2_x, sigma2_y = mf_update_variances(current, P, Q, posterior)
        new_params = params.replace(P=P, Q=Q, sigma2_x=sigma2_x, sigma2_y=sigma2_y)
        change = parameter_change(params, new_params)
        params = new_params
        if trace.step(iteration, params, change, current.Y, posterior.M_bar @ params.Q.T):
            break

    posterior = mf_posterior(params, current)
    Omega = posterior.C[np.newaxis] / posterior.ratios[:, np.newaxis, np.newaxis]
    moments = PosteriorMoments(M=posterior.M_bar, Omega=Omega, V=Omega.sum(axis=0) + posterior.M_bar.T @ posterior.M_bar)
    return trace.result(params, moments, iteration, float("nan"))


def predict_mixed_frequency(params: FactorParams, X_hf_new: np.ndarray, ratios) -> np.ndarray:
    """
    Low-frequency target prediction from standardized high-frequency features.

    Each high-frequency factor is conditioned on its own feature row; the factor means are
    averaged within each period before applying Q.
    """
    X_hf_new = _as_matrix(X_hf_new, "X_hf_new")
    if X_hf_new.shape[1] != params.p:
        raise DimensionMismatch(f"X_hf_new has {X_hf_new.shape[1]} columns, expected {params.p}")
    ratios = np.atleast_1d(np.asarray(ratios))
    if ratios.size == 1 and X_hf_new.shape[0] % int(ratios[0]) == 0:
        ratios = as_ratios(int(ratios[0]), X_hf_new.shape[0] // int(ratios[0]))
    else:
        ratios = as_ratios(ratios, ratios.shape[0])
    if int(ratios.sum()) != X_hf_new.shape[0]:
        raise DimensionMismatch("Ratios do not tile the rows of X_hf_new")
    P_scaled = params.P / params.sigma2_x
    A_inv = _checked_inverse(params.V_F_inv + params.P.T @ P_scaled, SingularPrecision, "within-period precision")
    means = X_hf_new @ P_scaled @ A_inv
    starts = np.concatenate([[0], np.cumsum(ratios)[:-1]])
    period_means = np.add.reduceat(means, starts, axis=0) / ratios[:, np.newaxis]
    return period_means @ params.Q.T
