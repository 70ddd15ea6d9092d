"""Rolling-window direct forecasting and MSFE tables."""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from targeted_factors._internals.errors import DimensionMismatch, InsufficientData, InvalidConfig, PtfaError
from targeted_factors._internals.methods import MethodOptions, fit_method, parse_method
from targeted_factors._internals.model import _as_matrix, standardize
from targeted_factors._internals.worker import run_parallel

logger = logging.getLogger(__name__)

MSFE_COLUMNS = ["method", "horizon", "k", "msfe", "n_points", "n_failed"]


@dataclass(frozen=True)
class ForecastSpec:
    """Rolling-window evaluation design."""

    window: int
    horizons: tuple[int, ...] = (1,)
    methods: tuple[str, ...] = ("ptfa", "pls")
    k_values: tuple[int, ...] = (1,)
    target_columns: tuple[str, ...] = ()
    seed: int | None = 0
    jobs: int = 1
    options: MethodOptions = field(default_factory=MethodOptions)


def validate_forecast_spec(spec: ForecastSpec) -> list[str]:
    errors = []
    if spec.window < 3:
        errors.append("window must be at least 3")
    if not spec.horizons or min(spec.horizons) < 1:
        errors.append("horizons must be positive")
    elif spec.window - max(spec.horizons) < 2:
        errors.append("window must exceed the largest horizon by at least 2 rows")
    if not spec.k_values or min(spec.k_values) < 1:
        errors.append("k values must be positive")
    if not spec.methods:
        errors.append("at least one method is required")
    for method in spec.methods:
        try:
            parse_method(method)
        except ValueError as exc:
            errors.append(str(exc))
    return errors


def forecast_window(
    raw_X: np.ndarray,
    raw_Y: np.ndarray,
    t_end: int,
    horizon: int,
    method: str,
    k: int,
    window: int,
    seed: int | None = 0,
    options: MethodOptions | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    One direct h-step forecast made at row t_end.

    The window covers rows t_end - window + 1 .. t_end; features at s are paired with
    targets at s + h inside it and standardized on the window alone. The forecast uses
    feature rows up to t_end and is compared with the target at t_end + h on the window's
    target scale.

    Returns:
        (forecast, actual) on the standardized scale; actual holds NaN where the target is missing.
    """
    start = t_end - window + 1
    if start < 0 or t_end + horizon >= raw_Y.shape[0]:
        raise InsufficientData(f"Window ending at row {t_end} with horizon {horizon} does not fit the panel")
    panel = standardize(
        raw_X[start:t_end - horizon + 1], raw_Y[start + horizon:t_end + 1], missing_policy="zero_impute"
    )
    model = fit_method(method, panel, k, seed=seed, options=options)
    X_recent = panel.scaler.transform_x(raw_X[t_end - horizon + 1:t_end + 1])
    X_recent = np.where(np.isnan(X_recent), 0.0, X_recent)
    forecast = model.predict(X_recent)[-1]
    actual = panel.scaler.transform_y(raw_Y[t_end + horizon])
    return forecast, actual


def _split(data: pd.DataFrame, target_columns: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
    missing = [c for c in target_columns if c not in data.columns]
    if not target_columns or missing:
        raise DimensionMismatch(f"Target columns not found: {missing or 'none given'}")
    features = [c for c in data.columns if c not in target_columns]
    if not features:
        raise DimensionMismatch("No feature columns left after removing the targets")
    return data[features].to_numpy(dtype=float), data[list(target_columns)].to_numpy(dtype=float)


def rolling_evaluate(data, spec: ForecastSpec, raw_Y: np.ndarray | None = None) -> pd.DataFrame:
    """
    MSFE per method, horizon and k over every admissible window end.

    Args:
        data: Raw panel as a DataFrame (targets named by spec.target_columns) or, together
            with ``raw_Y``, a raw feature matrix.
        spec: Evaluation design.
        raw_Y: Raw target matrix when ``data`` is a feature matrix.

    Returns:
        DataFrame with columns method, horizon, k, msfe, n_points and n_failed. The squared
        error of a point is averaged over its observed targets; failed fits are excluded
        from the mean and counted.
    """
    problems = validate_forecast_spec(spec)
    if problems:
        raise InvalidConfig(problems)
    if raw_Y is None:
        raw_X, raw_Y = _split(data, spec.target_columns)
    else:
        raw_X, raw_Y = _as_matrix(data, "raw_X"), _as_matrix(raw_Y, "raw_Y")
    T = raw_X.shape[0]
    if spec.window + max(spec.horizons) > T:
        raise InsufficientData(f"window {spec.window} plus horizon {max(spec.horizons)} exceeds T = {T}")
    methods = [parse_method(m) for m in spec.methods]

    def evaluate(t_end: int) -> list[dict]:
        records = []
        for horizon in spec.horizons:
            if t_end + horizon > T - 1:
                continue
            for method in methods:
                for k in spec.k_values:
                    record = {"method": method, "horizon": horizon, "k": k, "t_end": t_end, "se": np.nan, "failed": False}
                    try:
                        forecast, actual = forecast_window(
                            raw_X, raw_Y, t_end, horizon, method, k, spec.window, spec.seed, spec.options
                        )
                        errors = (forecast - actual) ** 2
                        if not np.all(np.isnan(errors)):
                            record["se"] = float(np.nanmean(errors))
                    except PtfaError as exc:
                        logger.warning("Window ending at %d: %s (h=%d, k=%d) failed: %s", t_end, method, horizon, k, exc)
                        record["failed"] = True
                    records.append(record)
        return records

    ends = range(spec.window - 1, T - min(spec.horizons))
    results = run_parallel(evaluate, ends, spec.jobs)
    points = pd.DataFrame([r for rows in results for r in rows])
    table = (
        points.groupby(["method", "horizon", "k"], sort=False)
        .agg(msfe=("se", "mean"), n_points=("se", "count"), n_failed=("failed", "sum"))
        .reset_index()
    )
    table["n_failed"] = table["n_failed"].astype(int)
    return table[MSFE_COLUMNS]
