"""
Command-line entry point.

Subcommands:
    fit       fit one model to feature and target CSVs
    simulate  run simulation replications or a noise/missing-data grid
    forecast  rolling-window forecast evaluation on one panel CSV

Exit codes: 0 on success, 1 on any error, 2 when EM stopped at --max-iter.
"""

import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from targeted_factors import __version__
from targeted_factors._internals.baselines import fit_nipals_pls, fit_pca_regression, fit_ppca_regression
from targeted_factors._internals.config import (
    CliConfig,
    UsageError,
    parse_cli_config,
    validate_cli_config,
)
from targeted_factors._internals.csvio import FLOAT_FORMAT, read_panel_csv, read_ratios, write_matrix_csv
from targeted_factors._internals.dynamics import DfmConfig, fit_dfm
from targeted_factors._internals.em_missing import fit_missing
from targeted_factors._internals.em_static import EmConfig, fit
from targeted_factors._internals.errors import PtfaError
from targeted_factors._internals.forecast import ForecastSpec, rolling_evaluate
from targeted_factors._internals.methods import MethodOptions
from targeted_factors._internals.mixed_frequency import fit_mixed_frequency, standardize_mixed
from targeted_factors._internals.model import FitResult, standardize
from targeted_factors._internals.simulation import DgpSpec, missing_grid, noise_grid, run_replications
from targeted_factors._internals.volatility import SvConfig, fit_sv

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2

NOISE_RANGE = (0.1, 5.0)
MISSING_RANGE = (0.0, 0.48)

BASELINES = {
    "pls": fit_nipals_pls,
    "pca": fit_pca_regression,
    "ppca": fit_ppca_regression,
}


def configure_logging(verbosity: int) -> None:
    level = {1: logging.DEBUG, 0: logging.INFO, -1: logging.WARNING}[verbosity]
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    logging.getLogger("joblib").setLevel(logging.WARNING)


def _factor_columns(k: int) -> list[str]:
    return [f"factor_{j + 1}" for j in range(k)]


def _json_number(value) -> float | None:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def _write_loadings(path: Path, P: np.ndarray, Q: np.ndarray, features: list[str], targets: list[str]) -> None:
    frame = pd.DataFrame(np.vstack([P, Q]), columns=_factor_columns(P.shape[1]))
    frame.insert(0, "target", [0] * len(features) + [1] * len(targets))
    frame.insert(0, "variable", features + targets)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def _write_report(path: Path, config: CliConfig, result: FitResult | None) -> None:
    lines = [{"version": __version__, "method": config.method, "k": config.k[0]}]
    if result is not None:
        for i, change in enumerate(result.change_path, start=1):
            loglik = result.loglik_path[i] if len(result.loglik_path) > i else None
            r2 = result.r2_path[i - 1] if len(result.r2_path) >= i else None
            lines.append(
                {"iteration": i, "loglik": _json_number(loglik), "change": _json_number(change), "r2": _json_number(r2)}
            )
        lines.append({
            "summary": True,
            "n_iter": result.n_iter,
            "converged": result.converged,
            "stop_reason": result.stop_reason,
            "initial_loglik": _json_number(result.loglik_path[0]) if len(result.loglik_path) else None,
            "foc_residual": _json_number(result.foc_residual),
            "sigma2_x": _json_number(result.params.sigma2_x),
            "sigma2_y": _json_number(result.params.sigma2_y),
        })
    else:
        lines.append({"summary": True, "n_iter": 0, "converged": True, "stop_reason": "closed_form"})
    path.write_text("".join(json.dumps(line) + "\n" for line in lines))


def cmd_fit(config: CliConfig) -> int:
    """Fit one model and write loadings, factors, variances and the fit report."""
    features, feature_dates = read_panel_csv(config.features)
    targets, target_dates = read_panel_csv(config.targets)
    dates = target_dates if target_dates is not None or config.method == "ptfa-mf" else feature_dates
    feature_names = [str(c) for c in features.columns]
    target_names = [str(c) for c in targets.columns]
    k = config.k[0]
    out = config.out
    out.mkdir(parents=True, exist_ok=True)

    if config.method in BASELINES:
        panel = standardize(features, targets)
        baseline = BASELINES[config.method](panel, k)
        _write_loadings(out / "loadings.csv", baseline.x_loadings, baseline.y_coefficients.T, feature_names, target_names)
        write_matrix_csv(out / "factors.csv", baseline.scores, _factor_columns(k), dates)
        if baseline.noise_variance is not None:
            write_matrix_csv(out / "variances.csv", [[baseline.noise_variance]], ["sigma2_x"])
        _write_report(out / "fit_report.jsonl", config, None)
        logger.info("Fitted %s with k=%d", config.method, k)
        return EXIT_OK

    em = EmConfig(
        k=k,
        tolerance=config.tolerance,
        max_iter=config.max_iter,
        seed=config.seed,
        track_loglik=config.method in ("ptfa", "ptfa-missing"),
        track_r2=True,
    )
    volatility = None
    if config.method == "ptfa-mf":
        ratios = read_ratios(config.ratios) if config.ratios is not None else config.ratio
        mf_panel = standardize_mixed(features, targets, ratios, missing_policy="zero_impute")
        result = fit_mixed_frequency(mf_panel, em)
    else:
        panel = standardize(features, targets, missing_policy="error" if config.method == "ptfa" else "zero_impute")
        if config.method == "ptfa":
            result = fit(panel, em)
        elif config.method == "ptfa-missing":
            result, _ = fit_missing(panel, em)
        elif config.method == "ptfa-sv":
            result, volatility = fit_sv(panel, SvConfig(em=em, lambda_x=config.decay_x, lambda_y=config.decay_y))
        else:
            result, dynamics = fit_dfm(panel, DfmConfig(em=em))
            labels = pd.Series([f"A[{i + 1}]" for i in range(k)] + ["f0", "sigma_v"])
            rows = np.vstack([dynamics.A, dynamics.f0, np.diag(dynamics.Sigma_v)])
            write_matrix_csv(out / "dynamics.csv", rows, _factor_columns(k), labels, index_label="parameter")

    params = result.params
    _write_loadings(out / "loadings.csv", params.P, params.Q, feature_names, target_names)
    write_matrix_csv(out / "factors.csv", result.posterior.M, _factor_columns(k), dates)
    if volatility is not None:
        vol = np.column_stack([volatility.sigma2_x, volatility.sigma2_y])
        write_matrix_csv(out / "variances.csv", vol, ["sigma2_x", "sigma2_y"], dates)
    else:
        write_matrix_csv(out / "variances.csv", [[params.sigma2_x, params.sigma2_y]], ["sigma2_x", "sigma2_y"])
    _write_report(out / "fit_report.jsonl", config, result)

    if result.stop_reason == "max_iter":
        print(f"Warning: EM did not converge within {config.max_iter} iterations", file=sys.stderr)
        return EXIT_MAX_ITER
    return EXIT_OK


def _options(config: CliConfig) -> MethodOptions:
    return MethodOptions(
        tolerance=config.tolerance, max_iter=config.max_iter, lambda_x=config.decay_x, lambda_y=config.decay_y
    )


def cmd_simulate(config: CliConfig) -> int:
    """Run replications and write the tidy table and its per-cell summary."""
    spec = DgpSpec(kind=config.dgp, k=config.k[0], seed=config.seed)
    common = dict(k=config.k[0], seed=config.seed, jobs=config.jobs, options=_options(config))
    methods = list(config.methods)
    rows, cols = config.cells
    if config.grid == "noise":
        report = noise_grid(
            spec, np.geomspace(*NOISE_RANGE, rows), np.geomspace(*NOISE_RANGE, cols), methods, config.reps, **common
        )
    elif config.grid == "missing":
        report = missing_grid(
            spec, np.linspace(*MISSING_RANGE, rows), np.linspace(*MISSING_RANGE, cols), methods, config.reps, **common
        )
    else:
        report = run_replications(
            spec, methods, config.reps, missing_x=config.missing_x, missing_y=config.missing_y, **common
        )
    config.out.mkdir(parents=True, exist_ok=True)
    report.to_csv(config.out / "replications.csv")
    report.to_csv(config.out / "summary.csv", summary=True)
    logger.info("Wrote %d replication rows to %s", len(report), config.out)
    return EXIT_OK


def cmd_forecast(config: CliConfig) -> int:
    """Rolling-window evaluation; writes one MSFE row per method, horizon and k."""
    data, _ = read_panel_csv(config.data)
    spec = ForecastSpec(
        window=config.window,
        horizons=config.horizons,
        methods=config.methods,
        k_values=config.k,
        target_columns=config.target_columns,
        seed=config.seed,
        jobs=config.jobs,
        options=_options(config),
    )
    table = rolling_evaluate(data, spec)
    config.out.mkdir(parents=True, exist_ok=True)
    table.to_csv(config.out / "msfe.csv", index=False, float_format=FLOAT_FORMAT)
    logger.info("Wrote %d MSFE rows to %s", len(table), config.out)
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "forecast": cmd_forecast,
}


def run(argv: list[str] | None = None) -> int:
    """Parse, validate and dispatch; returns the exit code."""
    try:
        config = parse_cli_config(argv)
    except UsageError as exc:
        print(f"{exc.usage}Error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    problems = validate_cli_config(config)
    if problems:
        for problem in problems:
            print(f"Error: {problem}", file=sys.stderr)
        return EXIT_ERROR

    configure_logging(config.verbosity)
    try:
        return COMMANDS[config.command](config)
    except (PtfaError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main():
    """Entry point for the ptfa command."""
    sys.exit(run())


if __name__ == "__main__":
    main()
