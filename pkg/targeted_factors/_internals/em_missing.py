"""EM with inner-loop imputation of entries missing at random."""

import logging

import numpy as np

from targeted_factors._internals.em_static import (
    EmConfig,
    IterationTrace,
    _require_valid,
    posterior_moments,
    starting_params,
    update_loadings,
    update_variances,
)
from targeted_factors._internals.errors import AllMissingColumn, DegenerateInit, _check_finite
from targeted_factors._internals.model import (
    DataPanel,
    FactorParams,
    FitResult,
    marginal_log_likelihood,
    mle_foc_residual,
    parameter_change,
)

logger = logging.getLogger(__name__)


def zero_fill(panel: DataPanel) -> DataPanel:
    """Set every masked entry to 0, the standardized column mean."""
    return panel.with_values(np.where(panel.mask_x, 0.0, panel.X), np.where(panel.mask_y, 0.0, panel.Y))


def impute_step(panel: DataPanel, M: np.ndarray, P: np.ndarray, Q: np.ndarray) -> DataPanel:
    """Replace masked X entries by M P' and masked Y entries by M Q'; observed entries are kept."""
    if not panel.has_missing:
        return panel
    X = np.where(panel.mask_x, M @ P.T, panel.X) if panel.mask_x.any() else panel.X
    Y = np.where(panel.mask_y, M @ Q.T, panel.Y) if panel.mask_y.any() else panel.Y
    return panel.with_values(X, Y)


def check_observed_columns(panel: DataPanel) -> None:
    for block, mask in (("X", panel.mask_x), ("Y", panel.mask_y)):
        for j in np.flatnonzero(mask.all(axis=0)):
            raise AllMissingColumn(block, int(j))


def fit_missing(panel: DataPanel, config: EmConfig, init: FactorParams | None = None) -> tuple[FitResult, DataPanel]:
    """
    Run EM, refreshing the masked entries from the current fit once per iteration.

    Masked entries start at zero. Each iteration computes the posterior on the current
    values, imputes with the pre-update loadings, then updates loadings and variances on
    the imputed data.

    Returns:
        The fit and the panel holding the final imputed values.
    """
    check_observed_columns(panel)
    _require_valid(config, panel.p, panel.q, panel.T)
    current = zero_fill(panel)
    params = starting_params(config, panel.p, panel.q, init)
    trace = IterationTrace(config, "PTFA-missing", lambda theta: marginal_log_likelihood(theta, current))
    trace.start(params)
    if panel.has_missing:
        logger.debug(
            "Imputing %d feature and %d target entries", int(panel.mask_x.sum()), int(panel.mask_y.sum())
        )

    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        posterior = posterior_moments(params, current)
        if iteration == 1:
            _check_finite(posterior.M, DegenerateInit, "Initial posterior mean is not finite")
        current = impute_step(current, posterior.M, params.P, params.Q)
        P, Q = update_loadings(posterior.M, posterior.V, current)
        sigma2_x, sigma2_y = update_variances(current, P, Q, posterior.V)
        new_params = params.replace(P=P, Q=Q, sigma2_x=sigma2_x, sigma2_y=sigma2_y)
        change = parameter_change(params, new_params)
        params = new_params
        if trace.step(iteration, params, change, current.Y, posterior.M @ params.Q.T):
            break

    posterior = posterior_moments(params, current)
    return trace.result(params, posterior, iteration, mle_foc_residual(params, current)), current
