"""Uniform fit/predict interface over every estimator, used by the harnesses, the CLI and the facade."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from targeted_factors._internals.baselines import (
    fit_nipals_pls,
    fit_pca_regression,
    fit_ppca_regression,
    predict_baseline,
)
from targeted_factors._internals.dynamics import DfmConfig, fit_dfm, predict_dfm
from targeted_factors._internals.em_missing import fit_missing
from targeted_factors._internals.em_static import EmConfig, fit
from targeted_factors._internals.model import DataPanel, predict_targets
from targeted_factors._internals.volatility import SvConfig, fit_sv, predict_sv

METHODS = (
    "ptfa",
    "ptfa-missing",
    "ptfa-imputed",
    "ptfa-sv",
    "ptfa-dfm",
    "pls",
    "pls1",
    "pca",
    "ppca",
    "null",
)


@dataclass(frozen=True)
class MethodOptions:
    """Estimator settings shared by the harnesses."""

    tolerance: float = 1e-6
    max_iter: int = 1000
    lambda_x: float = 0.94
    lambda_y: float = 0.94


@dataclass(frozen=True)
class MethodFit:
    """In-sample fit and an out-of-sample predictor on the standardized scale."""

    method: str
    fitted: np.ndarray
    predict: Callable[[np.ndarray], np.ndarray]  # rows of X_new -> one target row each
    converged: bool = True


def parse_method(name: str) -> str:
    """Normalize a method name."""
    key = name.strip().lower()
    if key not in METHODS:
        raise ValueError(f"Unknown method: {name}")
    return key


def fit_method(
    name: str, panel: DataPanel, k: int, seed: int | None = None, options: MethodOptions | None = None
) -> MethodFit:
    """
    Fit one method on a standardized panel.

    "ptfa" switches to inner-loop imputation when the panel carries masks; "ptfa-imputed"
    and the baselines fit on the current (zero-imputed) values instead. For "ptfa-dfm" the
    rows passed to ``predict`` are treated as the periods directly following the sample.
    """
    method = parse_method(name)
    options = options or MethodOptions()
    em = EmConfig(k=k, tolerance=options.tolerance, max_iter=options.max_iter, seed=seed)

    if method == "null":
        return MethodFit(method, np.zeros_like(panel.Y), lambda X_new: np.zeros((len(X_new), panel.q)))
    if method in ("ptfa", "ptfa-missing") and (panel.has_missing or method == "ptfa-missing"):
        result, _ = fit_missing(panel, em)
        return _static_fit(method, result)
    if method in ("ptfa", "ptfa-imputed"):
        return _static_fit(method, fit(panel.without_masks() if panel.has_missing else panel, em))
    if method == "ptfa-sv":
        config = SvConfig(em=em, lambda_x=options.lambda_x, lambda_y=options.lambda_y)
        result, vol = fit_sv(panel, config)
        return MethodFit(
            method, result.fitted(), lambda X_new: predict_sv(result.params, vol, X_new, config), result.converged
        )
    if method == "ptfa-dfm":
        result, dyn = fit_dfm(panel, DfmConfig(em=em))
        last_mean, last_cov = result.posterior.M[-1], result.posterior.Omega[-1]
        return MethodFit(
            method, result.fitted(), lambda X_new: predict_dfm(dyn, last_mean, last_cov, X_new), result.converged
        )

    values = panel.without_masks() if panel.has_missing else panel
    if method == "pls":
        baseline = fit_nipals_pls(values, k)
    elif method == "pls1":
        baseline = fit_nipals_pls(values, k, per_target=True)
    elif method == "pca":
        baseline = fit_pca_regression(values, k)
    else:
        baseline = fit_ppca_regression(values, k)
    return MethodFit(method, baseline.fitted, lambda X_new: predict_baseline(baseline, X_new))


def _static_fit(method: str, result) -> MethodFit:
    return MethodFit(
        method, result.fitted(), lambda X_new: predict_targets(result.params, X_new), result.converged
    )
