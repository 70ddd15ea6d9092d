"""EM estimation of the static targeted factor model on complete data."""

import logging
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from targeted_factors._internals.errors import (
    DegenerateInit,
    InvalidConfig,
    MissingValues,
    SingularPrecision,
    SingularV,
    _check_finite,
    _checked_inverse,
    _checked_solve,
)
from targeted_factors._internals.model import (
    VARIANCE_FLOOR,
    DataPanel,
    FactorParams,
    FitResult,
    PosteriorMoments,
    initial_params,
    marginal_log_likelihood,
    mle_foc_residual,
    parameter_change,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmConfig:
    """Settings shared by every EM variant."""

    k: int
    tolerance: float = 1e-6
    max_iter: int = 1000
    V_F: np.ndarray | None = None  # None means identity
    seed: int | None = None
    track_loglik: bool = False
    track_r2: bool = False
    r2_stop: bool = False  # also stop once the trailing mean R^2 stops moving
    r2_window: int = 25


def validate_em_config(config: EmConfig, p: int, q: int, T: int) -> list[str]:
    """Validate an EmConfig against panel dimensions and return a list of problems."""
    errors = []
    if config.k < 1:
        errors.append("k must be at least 1")
    elif config.k > min(p + q, T):
        errors.append(f"k = {config.k} exceeds min(p + q, T) = {min(p + q, T)}")
    if not config.tolerance > 0:
        errors.append("tolerance must be positive")
    if config.max_iter < 1:
        errors.append("max_iter must be at least 1")
    if config.r2_window < 1:
        errors.append("r2_window must be at least 1")
    if config.V_F is not None:
        V_F = np.asarray(config.V_F, dtype=float)
        if V_F.shape != (config.k, config.k):
            errors.append(f"V_F must be {config.k}x{config.k}")
        elif not np.allclose(V_F, V_F.T, atol=1e-12):
            errors.append("V_F must be symmetric")
        elif np.linalg.eigvalsh(V_F).min() <= 0:
            errors.append("V_F must be positive definite")
    return errors


def _require_valid(config: EmConfig, p: int, q: int, T: int) -> None:
    problems = validate_em_config(config, p, q, T)
    if problems:
        raise InvalidConfig(problems)


def starting_params(config: EmConfig, p: int, q: int, init: FactorParams | None = None) -> FactorParams:
    """Explicit init when given, otherwise the seeded default."""
    if init is not None:
        if init.P.shape != (p, config.k) or init.Q.shape != (q, config.k):
            raise InvalidConfig([f"init loadings must be {p}x{config.k} and {q}x{config.k}"])
        _check_finite(init.as_vector(), DegenerateInit, "init parameters are not finite")
        return init
    return initial_params(p, q, config.k, seed=config.seed, V_F=config.V_F)


class IterationTrace:
    """
    Per-iteration bookkeeping for an EM loop.

    Records parameter-change norms, optional log-likelihood and R^2 paths, and decides when
    the loop stops.
    """

    def __init__(self, config: EmConfig, label: str, loglik: Callable[[Any], float] | None = None):
        self.config = config
        self.label = label
        self._loglik = loglik if config.track_loglik else None
        self.loglik_path: list[float] = []
        self.change_path: list[float] = []
        self.r2_path: list[float] = []
        self.stop_reason = "max_iter"

    def start(self, params: Any) -> None:
        """Record the likelihood at the starting values and reject degenerate ones."""
        if self._loglik is not None:
            value = self._loglik(params)
            if not np.isfinite(value):
                raise DegenerateInit(f"{self.label}: initial log-likelihood is not finite")
            self.loglik_path.append(value)

    def step(self, iteration: int, params: Any, change: float,
             Y: np.ndarray | None = None, Y_hat: np.ndarray | None = None) -> bool:
        """Record one iteration; return True when the loop should stop."""
        self.change_path.append(change)
        if self._loglik is not None:
            self.loglik_path.append(self._loglik(params))
        if (self.config.track_r2 or self.config.r2_stop) and Y is not None:
            self.r2_path.append(_average_r2(Y, Y_hat))
        logger.debug("%s iteration %d: change %.3e", self.label, iteration, change)

        if change < self.config.tolerance:
            self.stop_reason = "tolerance"
            logger.info("%s converged after %d iterations", self.label, iteration)
            return True
        window = self.config.r2_window
        if self.config.r2_stop and len(self.r2_path) > window:
            trailing = float(np.mean(self.r2_path[-window:]))
            if abs(trailing - self.r2_path[-1]) <= self.config.tolerance:
                self.stop_reason = "r2_plateau"
                logger.info("%s R^2 plateaued after %d iterations", self.label, iteration)
                return True
        if iteration == self.config.max_iter:
            logger.warning(
                "%s stopped at max_iter=%d without converging (last change %.3e)",
                self.label, iteration, change,
            )
        return False

    @property
    def converged(self) -> bool:
        return self.stop_reason == "tolerance"

    def result(self, params: FactorParams, posterior: PosteriorMoments, n_iter: int, foc_residual: float) -> FitResult:
        return FitResult(
            params=params,
            posterior=posterior,
            loglik_path=np.asarray(self.loglik_path),
            n_iter=n_iter,
            converged=self.converged,
            foc_residual=foc_residual,
            change_path=np.asarray(self.change_path),
            r2_path=np.asarray(self.r2_path),
            stop_reason=self.stop_reason,
        )


def _average_r2(Y: np.ndarray, Y_hat: np.ndarray) -> float:
    total = np.sum((Y - Y.mean(axis=0)) ** 2, axis=0)
    resid = np.sum((Y - Y_hat) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.mean(1.0 - resid / total))


def posterior_precision(params: FactorParams, sigma2_x: float | None = None, sigma2_y: float | None = None) -> np.ndarray:
    """V_F^-1 + P'P / sigma2_x + Q'Q / sigma2_y."""
    sigma2_x = params.sigma2_x if sigma2_x is None else sigma2_x
    sigma2_y = params.sigma2_y if sigma2_y is None else sigma2_y
    return params.V_F_inv + params.P.T @ params.P / sigma2_x + params.Q.T @ params.Q / sigma2_y


def posterior_moments(params: FactorParams, panel: DataPanel) -> PosteriorMoments:
    """Factor posterior: Omega, M = (X P / sigma2_x + Y Q / sigma2_y) Omega and V = T Omega + M'M."""
    if np.isnan(panel.X).any() or np.isnan(panel.Y).any():
        raise MissingValues("Posterior moments need a panel without NaN entries")
    Omega = _checked_inverse(posterior_precision(params), SingularPrecision, "posterior precision")
    M = (panel.X @ params.P / params.sigma2_x + panel.Y @ params.Q / params.sigma2_y) @ Omega
    V = panel.T * Omega + M.T @ M
    return PosteriorMoments(M=M, Omega=Omega, V=V)


def update_loadings(M: np.ndarray, V: np.ndarray, panel: DataPanel) -> tuple[np.ndarray, np.ndarray]:
    """Stacked loading update L = Z' M V^-1, split into (P, Q)."""
    # L V = Z'M and V is symmetric, so L' = V^-1 M'Z
    L = _checked_solve(V, M.T @ panel.Z, SingularV, "V").T
    return L[:panel.p], L[panel.p:]


def update_variances(panel: DataPanel, P: np.ndarray, Q: np.ndarray, V: np.ndarray) -> tuple[float, float]:
    """Noise variances from the freshly updated loadings, clamped at VARIANCE_FLOOR."""
    sigma2_x = (np.sum(panel.X ** 2) - np.trace(P.T @ P @ V)) / (panel.T * panel.p)
    sigma2_y = (np.sum(panel.Y ** 2) - np.trace(Q.T @ Q @ V)) / (panel.T * panel.q)
    return max(float(sigma2_x), VARIANCE_FLOOR), max(float(sigma2_y), VARIANCE_FLOOR)


def em_step(params: FactorParams, panel: DataPanel) -> tuple[FactorParams, PosteriorMoments]:
    """One E-step and M-step; returns the new parameters and the posterior used."""
    posterior = posterior_moments(params, panel)
    P, Q = update_loadings(posterior.M, posterior.V, panel)
    sigma2_x, sigma2_y = update_variances(panel, P, Q, posterior.V)
    return params.replace(P=P, Q=Q, sigma2_x=sigma2_x, sigma2_y=sigma2_y), posterior


def fit(panel: DataPanel, config: EmConfig, init: FactorParams | None = None) -> FitResult:
    """
    Run EM on a complete, standardized panel.

    Args:
        panel: Panel without masks.
        config: EM settings; k is validated against the panel dimensions.
        init: Optional starting parameters; the seeded default is used otherwise.

    Returns:
        FitResult with the posterior recomputed at the final parameters.
    """
    if panel.has_missing:
        raise MissingValues("Panel carries missing entries; use fit_missing or clear the masks")
    _require_valid(config, panel.p, panel.q, panel.T)
    params = starting_params(config, panel.p, panel.q, init)
    trace = IterationTrace(config, "PTFA", lambda theta: marginal_log_likelihood(theta, panel))
    trace.start(params)

    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        new_params, posterior = em_step(params, panel)
        if iteration == 1:
            _check_finite(posterior.M, DegenerateInit, "Initial posterior mean is not finite")
        change = parameter_change(params, new_params)
        params = new_params
        if trace.step(iteration, params, change, panel.Y, posterior.M @ params.Q.T):
            break

    posterior = posterior_moments(params, panel)
    return trace.result(params, posterior, iteration, mle_foc_residual(params, panel))
