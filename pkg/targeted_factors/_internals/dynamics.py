"""Targeted dynamic factor model: VAR(1) factors with a block-banded posterior."""

import dataclasses
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from targeted_factors._internals import banded
from targeted_factors._internals.em_missing import check_observed_columns, impute_step, zero_fill
from targeted_factors._internals.em_static import (
    EmConfig,
    IterationTrace,
    starting_params,
    update_loadings,
    update_variances,
    validate_em_config,
)
from targeted_factors._internals.errors import (
    DegenerateInit,
    DimensionMismatch,
    InvalidConfig,
    MissingValues,
    NonStationaryDynamicsWarning,
    SingularLagMoment,
    SingularModelCovariance,
    SingularPrecision,
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
    _as_matrix,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DfmConfig:
    """Dynamic-factor settings on top of the shared EM settings."""

    em: EmConfig
    estimate_dynamics: bool = True
    fix_innovation_variance: bool = True  # keep Sigma_v at its starting value (V_F)
    initial_A: np.ndarray | None = None  # default 0.5 I when estimated, 0 otherwise


def validate_dfm_config(config: DfmConfig, p: int, q: int, T: int) -> list[str]:
    errors = validate_em_config(config.em, p, q, T)
    if config.initial_A is not None:
        A = np.atleast_2d(np.asarray(config.initial_A, dtype=float))
        if A.shape != (config.em.k, config.em.k):
            errors.append(f"initial_A must be {config.em.k}x{config.em.k}")
    if config.em.V_F is not None:
        V_F = np.asarray(config.em.V_F, dtype=float)
        if V_F.ndim == 2 and not np.allclose(V_F, np.diag(np.diag(V_F))):
            errors.append("V_F must be diagonal for the dynamic model")
    return errors


@dataclass(frozen=True)
class DfmParams:
    """
    VAR(1) law of motion f_t = A f_{t-1} + v_t with f_0 fixed and v_t ~ N(0, Sigma_v).

    Sigma_v is stored as the V_F of the base parameters.
    """

    A: np.ndarray
    f0: np.ndarray
    base: FactorParams

    def __post_init__(self):
        k = self.base.k
        if self.A.shape != (k, k) or self.f0.shape != (k,):
            raise DimensionMismatch(f"A must be {k}x{k} and f0 must have {k} entries")
        if not np.allclose(self.Sigma_v, np.diag(np.diag(self.Sigma_v))):
            raise DimensionMismatch("Sigma_v must be diagonal")

    @property
    def Sigma_v(self) -> np.ndarray:
        return self.base.V_F

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    def replace(self, **changes) -> "DfmParams":
        return dataclasses.replace(self, **changes)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.base.as_vector(), self.A.ravel(), self.f0, np.diag(self.Sigma_v)])


@dataclass(frozen=True)
class DfmPosterior:
    """Posterior mean and the band sums the M-step needs."""

    M: np.ndarray  # (T, k)
    V0: np.ndarray  # sum_t V_{t,t}
    V1: np.ndarray  # sum_{t<T} V_{t,t}
    V10: np.ndarray  # sum_{t>1} V_{t,t-1}
    m1: np.ndarray
    band: banded.BandInverse
    logdet_precision: float

    @property
    def last_cov(self) -> np.ndarray:
        return self.band.diag_blocks[-1]

    def as_moments(self) -> PosteriorMoments:
        return PosteriorMoments(M=self.M, Omega=self.band.diag_blocks, V=self.V0)


def _observation_precision(base: FactorParams) -> np.ndarray:
    return base.P.T @ base.P / base.sigma2_x + base.Q.T @ base.Q / base.sigma2_y


def dfm_posterior(params: DfmParams, panel: DataPanel) -> DfmPosterior:
    """Smoothed factor means and band moments through the banded Cholesky factor."""
    if np.isnan(panel.X).any() or np.isnan(panel.Y).any():
        raise MissingValues("The dynamic posterior needs a panel without NaN entries")
    base = params.base
    if base.p != panel.p or base.q != panel.q:
        raise DimensionMismatch("Panel and parameters disagree on p or q")
    T, k = panel.T, params.k
    Sigma_v_inv = base.V_F_inv
    precision = banded.assemble_dfm_precision(params.A, Sigma_v_inv, _observation_precision(base), T)
    factor = banded.cholesky(precision)

    rhs = panel.X @ base.P / base.sigma2_x + panel.Y @ base.Q / base.sigma2_y
    rhs[0] += Sigma_v_inv @ params.A @ params.f0
    M = banded.solve(factor, rhs.ravel()).reshape(T, k)
    band = banded.partial_inverse_band(factor)

    V0 = band.diag_blocks.sum(axis=0) + M.T @ M
    V1 = band.diag_blocks[:-1].sum(axis=0) + M[:-1].T @ M[:-1]
    V10 = band.off_blocks.sum(axis=0) + M[1:].T @ M[:-1]
    return DfmPosterior(
        M=M, V0=V0, V1=V1, V10=V10, m1=M[0].copy(), band=band, logdet_precision=factor.logdet()
    )


def update_dynamics(post: DfmPosterior, params: DfmParams, config: DfmConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    M-step for (A, f0, Sigma_v).

    A = V10 V1^-1 regresses f_t on f_{t-1}; f0 = (A' S^-1 A)^-1 A' S^-1 m1 with S the current
    Sigma_v. The diagonal Sigma_v update uses the new A and f0.
    """
    A, f0, Sigma_v = params.A, params.f0, params.Sigma_v
    if config.estimate_dynamics:
        # A V1 = V10 and V1 is symmetric, so A' = V1^-1 V10'
        A = _checked_solve(post.V1, post.V10.T, SingularLagMoment, "lagged second moment").T
        weighted = A.T @ params.base.V_F_inv
        f0 = _checked_solve(weighted @ A, weighted @ post.m1, SingularLagMoment, "A' Sigma_v^-1 A")
    if not config.fix_innovation_variance:
        T = post.M.shape[0]
        gap = post.m1 - A @ f0
        innovation = (
            post.V0
            - np.outer(post.m1, post.m1)
            + np.outer(gap, gap)
            - A @ post.V10.T
            - post.V10 @ A.T
            + A @ post.V1 @ A.T
        )
        Sigma_v = np.diag(np.maximum(np.diag(innovation) / T, VARIANCE_FLOOR))
    return A, f0, Sigma_v


def _initial_dynamics(config: DfmConfig, k: int) -> np.ndarray:
    if config.initial_A is not None:
        return np.atleast_2d(np.asarray(config.initial_A, dtype=float)).copy()
    return 0.5 * np.eye(k) if config.estimate_dynamics else np.zeros((k, k))


def _warn_if_nonstationary(params: DfmParams) -> None:
    radius = params.spectral_radius
    if radius >= 1.0:
        message = f"Estimated VAR coefficient has spectral radius {radius:.4f} >= 1"
        logger.warning(message)
        warnings.warn(message, NonStationaryDynamicsWarning, stacklevel=3)


def fit_dfm(panel: DataPanel, config: DfmConfig, init: FactorParams | None = None) -> tuple[FitResult, DfmParams]:
    """
    Run EM for the dynamic factor model.

    Loadings and noise variances follow the static updates with V0 in place of V; the
    dynamics are updated after them. The starting Sigma_v is the configured V_F, which must
    be diagonal. The likelihood, when tracked, is the dense marginal likelihood and so is
    only practical for short panels. The first-order residual is reported as NaN.

    Returns:
        The fit (its params hold the loadings, variances and Sigma_v as V_F) and the full
        dynamic parameters.
    """
    check_observed_columns(panel)
    problems = validate_dfm_config(config, panel.p, panel.q, panel.T)
    if problems:
        raise InvalidConfig(problems)
    current = zero_fill(panel)
    base = starting_params(config.em, panel.p, panel.q, init)
    params = DfmParams(A=_initial_dynamics(config, base.k), f0=np.zeros(base.k), base=base)
    trace = IterationTrace(config.em, "PTFA-DFM", lambda theta: dfm_marginal_log_likelihood(theta, current))
    trace.start(params)

    iteration = 0
    for iteration in range(1, config.em.max_iter + 1):
        post = dfm_posterior(params, current)
        if iteration == 1:
            _check_finite(post.M, DegenerateInit, "Initial posterior mean is not finite")
        current = impute_step(current, post.M, params.base.P, params.base.Q)
        P, Q = update_loadings(post.M, post.V0, current)
        sigma2_x, sigma2_y = update_variances(current, P, Q, post.V0)
        A, f0, Sigma_v = update_dynamics(post, params, config)
        new_params = DfmParams(
            A=A, f0=f0, base=params.base.replace(P=P, Q=Q, sigma2_x=sigma2_x, sigma2_y=sigma2_y, V_F=Sigma_v)
        )
        change = float(np.linalg.norm(new_params.as_vector() - params.as_vector()))
        params = new_params
        if trace.step(iteration, params, change, current.Y, post.M @ Q.T):
            break

    _warn_if_nonstationary(params)
    post = dfm_posterior(params, current)
    result = trace.result(params.base, post.as_moments(), iteration, float("nan"))
    return result, params


def dfm_marginal_log_likelihood(params: DfmParams, panel: DataPanel) -> float:
    """
    Observed-data log-likelihood with the factor path integrated out.

    Builds the dense (T d) x (T d) covariance, so it is a diagnostic for short panels.
    """
    base = params.base
    T, k, d = panel.T, params.k, panel.p + panel.q
    prior_precision = banded.assemble_dfm_precision(params.A, base.V_F_inv, np.zeros((k, k)), T).to_dense()
    prior_cov = _checked_inverse(prior_precision, SingularPrecision, "prior precision")
    prior_mean = np.empty((T, k))
    state = params.f0
    for t in range(T):
        state = params.A @ state
        prior_mean[t] = state
    L = base.loadings
    big_L = np.kron(np.eye(T), L)
    mean = (prior_mean @ L.T).ravel()
    cov = big_L @ prior_cov @ big_L.T + np.diag(np.tile(base.noise_variances, T))
    try:
        factor = linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularModelCovariance(f"Dynamic model covariance is not positive definite: {exc}") from exc
    resid = panel.Z.ravel() - mean
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    quad = resid @ linalg.cho_solve(factor, resid)
    return float(-0.5 * (T * d * np.log(2.0 * np.pi) + logdet + quad))


def predict_dfm(
    params: DfmParams, last_mean: np.ndarray, last_cov: np.ndarray, X_new: np.ndarray
) -> np.ndarray:
    """
    Standardized target forecasts for the periods following the sample.

    The first new factor has prior N(A m_T, A Omega_TT A' + Sigma_v) and later ones follow
    the VAR(1) law of motion; the stacked new factors are then conditioned on X_new.
    """
    X_new = _as_matrix(X_new, "X_new")
    base = params.base
    if X_new.shape[1] != base.p:
        raise DimensionMismatch(f"X_new has {X_new.shape[1]} columns, expected {base.p}")
    n, k = X_new.shape[0], params.k
    Sigma_v_inv = base.V_F_inv
    first_cov = params.A @ last_cov @ params.A.T + params.Sigma_v
    first_precision = _checked_inverse(first_cov, SingularPrecision, "first forecast covariance")

    precision = banded.assemble_dfm_precision(params.A, Sigma_v_inv, base.P.T @ base.P / base.sigma2_x, n)
    diag_blocks = precision.diag_blocks.copy()
    diag_blocks[0] += first_precision - Sigma_v_inv
    factor = banded.cholesky(banded.BlockBandedMatrix(diag_blocks, precision.off_blocks))

    rhs = X_new @ base.P / base.sigma2_x
    rhs[0] += first_precision @ params.A @ np.asarray(last_mean, dtype=float)
    means = banded.solve(factor, rhs.ravel()).reshape(n, k)
    return means @ base.Q.T
