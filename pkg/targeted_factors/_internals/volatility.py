"""EM with EWMA stochastic volatility in the feature and target noise."""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from targeted_factors._internals.em_missing import check_observed_columns, impute_step, zero_fill
from targeted_factors._internals.em_static import (
    EmConfig,
    IterationTrace,
    starting_params,
    update_loadings,
    validate_em_config,
)
from targeted_factors._internals.errors import (
    DegenerateInit,
    DimensionMismatch,
    InvalidConfig,
    SingularPrecision,
    SingularV,
    _check_finite,
    _checked_solve,
)
from targeted_factors._internals.model import (
    VARIANCE_FLOOR,
    DataPanel,
    FactorParams,
    FitResult,
    PosteriorMoments,
    feature_posterior,
    mle_foc_residual,
    parameter_change,
)

logger = logging.getLogger(__name__)

DEFAULT_DECAY = 0.94


@dataclass(frozen=True)
class SvConfig:
    """Decay factors for the EWMA volatility paths on top of the shared EM settings."""

    em: EmConfig
    lambda_x: float = DEFAULT_DECAY
    lambda_y: float = DEFAULT_DECAY
    weighted_loadings: bool = False  # weight each period by its inverse volatility in the M-step


def validate_sv_config(config: SvConfig, p: int, q: int, T: int) -> list[str]:
    errors = validate_em_config(config.em, p, q, T)
    for name, value in (("lambda_x", config.lambda_x), ("lambda_y", config.lambda_y)):
        if not 0.0 <= value < 1.0:
            errors.append(f"{name} must be in [0, 1), got {value}")
    return errors


@dataclass(frozen=True)
class VolatilityPath:
    """Per-period noise variances."""

    sigma2_x: np.ndarray
    sigma2_y: np.ndarray

    def __post_init__(self):
        if self.sigma2_x.shape != self.sigma2_y.shape or self.sigma2_x.ndim != 1:
            raise DimensionMismatch("Volatility paths must be vectors of equal length")
        if np.any(self.sigma2_x < VARIANCE_FLOOR) or np.any(self.sigma2_y < VARIANCE_FLOOR):
            raise ValueError("Volatility paths must stay at or above the variance floor")

    @classmethod
    def constant(cls, T: int, sigma2_x: float, sigma2_y: float) -> "VolatilityPath":
        return cls(np.full(T, float(sigma2_x)), np.full(T, float(sigma2_y)))

    @property
    def T(self) -> int:
        return self.sigma2_x.shape[0]

    def time_average(self) -> tuple[float, float]:
        return float(np.mean(self.sigma2_x)), float(np.mean(self.sigma2_y))


def sv_posterior_period(
    params: FactorParams, vol: VolatilityPath, t: int, x_t: np.ndarray, y_t: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of the factor in period t."""
    P_scaled = params.P / vol.sigma2_x[t]
    Q_scaled = params.Q / vol.sigma2_y[t]
    precision = params.V_F_inv + params.P.T @ P_scaled + params.Q.T @ Q_scaled
    Omega_t = _checked_solve(precision, np.eye(params.k), SingularPrecision, f"precision of period {t}")
    Omega_t = 0.5 * (Omega_t + Omega_t.T)
    return (x_t @ P_scaled + y_t @ Q_scaled) @ Omega_t, Omega_t


def sv_posterior(params: FactorParams, vol: VolatilityPath, panel: DataPanel) -> PosteriorMoments:
    """All per-period posteriors at once; Omega has shape (T, k, k) and V = sum Omega_t + M'M."""
    if vol.T != panel.T:
        raise DimensionMismatch(f"Volatility path has {vol.T} periods, panel has {panel.T}")
    inv_x = 1.0 / vol.sigma2_x
    inv_y = 1.0 / vol.sigma2_y
    precision = (
        params.V_F_inv
        + inv_x[:, np.newaxis, np.newaxis] * (params.P.T @ params.P)
        + inv_y[:, np.newaxis, np.newaxis] * (params.Q.T @ params.Q)
    )
    try:
        Omega = np.linalg.inv(precision)
    except np.linalg.LinAlgError as exc:
        raise SingularPrecision(f"Per-period posterior precision is singular: {exc}") from exc
    Omega = 0.5 * (Omega + np.swapaxes(Omega, 1, 2))
    rhs = inv_x[:, np.newaxis] * (panel.X @ params.P) + inv_y[:, np.newaxis] * (panel.Y @ params.Q)
    M = np.einsum("ti,tij->tj", rhs, Omega)
    V = Omega.sum(axis=0) + M.T @ M
    return PosteriorMoments(M=M, Omega=Omega, V=V)


def ewma_update(residual_sq_mean: float, trace_term: float, prev: float | None, lam: float) -> float:
    """
    One step of the volatility recursion.

    Args:
        residual_sq_mean: Squared residual norm of the period divided by the block dimension.
        trace_term: Tr(P'P Omega_t) divided by the block dimension.
        prev: Previous path value; None for the first period, which returns the raw estimate.
        lam: Decay factor in [0, 1).
    """
    estimate = residual_sq_mean + trace_term
    value = estimate if prev is None else lam * prev + (1.0 - lam) * estimate
    return max(value, VARIANCE_FLOOR)


def ewma_path(estimates: np.ndarray, lam: float) -> np.ndarray:
    """Run the recursion over a vector of per-period estimates, starting from the first estimate."""
    smoothed = pd.Series(np.asarray(estimates, dtype=float)).ewm(alpha=1.0 - lam, adjust=False).mean()
    return np.maximum(smoothed.to_numpy(), VARIANCE_FLOOR)


def period_estimates(
    values: np.ndarray, M: np.ndarray, Omega: np.ndarray, loadings: np.ndarray
) -> np.ndarray:
    """(||e_t||^2 + Tr(L'L Omega_t)) / dim for one block with loadings L."""
    residuals = values - M @ loadings.T
    trace = np.einsum("ij,tji->t", loadings.T @ loadings, Omega)
    return (np.sum(residuals ** 2, axis=1) + trace) / values.shape[1]


def update_volatility(
    panel: DataPanel, posterior: PosteriorMoments, P: np.ndarray, Q: np.ndarray, config: SvConfig
) -> VolatilityPath:
    sigma2_x = ewma_path(period_estimates(panel.X, posterior.M, posterior.Omega, P), config.lambda_x)
    sigma2_y = ewma_path(period_estimates(panel.Y, posterior.M, posterior.Omega, Q), config.lambda_y)
    return VolatilityPath(sigma2_x, sigma2_y)


def weighted_update_loadings(
    posterior: PosteriorMoments, vol: VolatilityPath, panel: DataPanel
) -> tuple[np.ndarray, np.ndarray]:
    """Loadings with every period weighted by its inverse volatility."""
    V_t = posterior.Omega + np.einsum("ti,tj->tij", posterior.M, posterior.M)
    loadings = []
    for values, sigma2 in ((panel.X, vol.sigma2_x), (panel.Y, vol.sigma2_y)):
        V_w = np.einsum("t,tij->ij", 1.0 / sigma2, V_t)
        M_w = (posterior.M / sigma2[:, np.newaxis]).T @ values
        loadings.append(_checked_solve(V_w, M_w, SingularV, "weighted V").T)
    return loadings[0], loadings[1]


def fit_sv(
    panel: DataPanel, config: SvConfig, init: FactorParams | None = None
) -> tuple[FitResult, VolatilityPath]:
    """
    Run EM with per-period noise variances smoothed by EWMA.

    The returned params carry the time averages of the volatility paths as their
    sigma2_x and sigma2_y. Masked entries are imputed from the current fit each iteration.
    """
    check_observed_columns(panel)
    problems = validate_sv_config(config, panel.p, panel.q, panel.T)
    if problems:
        raise InvalidConfig(problems)
    current = zero_fill(panel)
    params = starting_params(config.em, panel.p, panel.q, init)
    vol = VolatilityPath.constant(panel.T, params.sigma2_x, params.sigma2_y)
    trace = IterationTrace(config.em, "PTFA-SV")

    iteration = 0
    for iteration in range(1, config.em.max_iter + 1):
        posterior = sv_posterior(params, vol, current)
        if iteration == 1:
            _check_finite(posterior.M, DegenerateInit, "Initial posterior mean is not finite")
        current = impute_step(current, posterior.M, params.P, params.Q)
        if config.weighted_loadings:
            P, Q = weighted_update_loadings(posterior, vol, current)
        else:
            P, Q = update_loadings(posterior.M, posterior.V, current)
        vol = update_volatility(current, posterior, P, Q, config)
        sigma2_x, sigma2_y = vol.time_average()
        new_params = params.replace(P=P, Q=Q, sigma2_x=sigma2_x, sigma2_y=sigma2_y)
        change = parameter_change(params, new_params)
        params = new_params
        if trace.step(iteration, params, change, current.Y, posterior.M @ params.Q.T):
            break

    posterior = sv_posterior(params, vol, current)
    return trace.result(params, posterior, iteration, mle_foc_residual(params, current)), vol


def forecast_volatility(vol: VolatilityPath, lambda_x: float, lambda_y: float) -> tuple[float, float]:
    """One more recursion step with the path mean as the new estimate."""
    sigma2_x = ewma_update(float(np.mean(vol.sigma2_x)), 0.0, float(vol.sigma2_x[-1]), lambda_x)
    sigma2_y = ewma_update(float(np.mean(vol.sigma2_y)), 0.0, float(vol.sigma2_y[-1]), lambda_y)
    return sigma2_x, sigma2_y


def predict_sv(params: FactorParams, vol: VolatilityPath, X_new: np.ndarray, config: SvConfig) -> np.ndarray:
    """Standardized target prediction with the feature noise set to its volatility forecast."""
    sigma2_x, sigma2_y = forecast_volatility(vol, config.lambda_x, config.lambda_y)
    means, _ = feature_posterior(params.replace(sigma2_x=sigma2_x, sigma2_y=sigma2_y), X_new)
    return means @ params.Q.T
