"""Simulated data-generating processes and the replication harness built on them."""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd
from scipy import linalg

from targeted_factors._internals.errors import InvalidConfig, PtfaError
from targeted_factors._internals.methods import MethodOptions, fit_method, parse_method
from targeted_factors._internals.mixed_frequency import MixedFrequencyPanel, standardize_mixed
from targeted_factors._internals.model import DataPanel, r_squared, standardize
from targeted_factors._internals.worker import run_parallel

logger = logging.getLogger(__name__)

DgpKind = Literal["simple", "system", "nongaussian", "dynamic"]
DGP_KINDS = ("simple", "system", "nongaussian", "dynamic")
MAX_MISSING_RATE = 0.9


@dataclass(frozen=True)
class DgpSpec:
    """Simulation design; the defaults are the standard desk-scale setting."""

    kind: DgpKind = "simple"
    T: int = 200
    p: int = 10
    q: int = 3
    k: int = 2
    sigma_x: float = 1.0
    sigma_y: float = 1.0  # ignored by the nongaussian kind, whose target noise is a unit chi-square(1)
    rho_x: float = 0.5  # Toeplitz correlation, system kind only
    rho_y: float = 0.5
    persistence: float = 0.8  # A = persistence * I, dynamic kind only
    seed: int | None = None

    def replace(self, **changes) -> "DgpSpec":
        return dataclasses.replace(self, **changes)


def parse_dgp_kind(name: str) -> DgpKind:
    key = name.strip().lower()
    if key not in DGP_KINDS:
        raise ValueError(f"Unknown DGP kind: {name}")
    return key


def validate_dgp_spec(spec: DgpSpec) -> list[str]:
    errors = []
    if spec.kind not in DGP_KINDS:
        errors.append(f"Unknown DGP kind: {spec.kind}")
    if spec.T < 2 or spec.p < 1 or spec.q < 1 or spec.k < 1:
        errors.append("T must be at least 2 and p, q, k at least 1")
    if spec.sigma_x < 0 or spec.sigma_y < 0:
        errors.append("Noise scales cannot be negative")
    if not (-1.0 <= spec.rho_x <= 1.0 and -1.0 <= spec.rho_y <= 1.0):
        errors.append("Toeplitz correlations must be in [-1, 1]")
    if not -1.0 < spec.persistence < 1.0:
        errors.append("persistence must be in (-1, 1)")
    return errors


@dataclass(frozen=True)
class DgpTruth:
    """Ground truth behind a simulated panel."""

    P: np.ndarray
    Q: np.ndarray
    F: np.ndarray
    Y_clean: np.ndarray
    raw_X: np.ndarray
    raw_Y: np.ndarray  # complete targets before any masking


def _factors(spec: DgpSpec, rng: np.random.Generator, rows: int) -> np.ndarray:
    if spec.kind != "dynamic":
        return rng.standard_normal((rows, spec.k))
    a = spec.persistence
    shocks = rng.standard_normal((rows, spec.k))
    F = np.empty((rows, spec.k))
    F[0] = shocks[0] / np.sqrt(1.0 - a ** 2)
    for t in range(1, rows):
        F[t] = a * F[t - 1] + shocks[t]
    return F


def _errors(spec: DgpSpec, rng: np.random.Generator, rows: int, cols: int, block: str) -> np.ndarray:
    sigma = spec.sigma_x if block == "x" else spec.sigma_y
    if spec.kind == "system":
        rho = spec.rho_x if block == "x" else spec.rho_y
        cov = linalg.toeplitz(rho ** np.arange(cols))
        return sigma * rng.multivariate_normal(np.zeros(cols), cov, size=rows, method="eigh")
    if spec.kind == "nongaussian":
        if block == "x":
            return sigma * rng.standard_t(3, size=(rows, cols))
        # chi-square(1) centered to mean zero; sigma_y does not scale it
        return rng.chisquare(1, size=(rows, cols)) - 1.0
    return sigma * rng.standard_normal((rows, cols))


def generate(spec: DgpSpec) -> tuple[DataPanel, DgpTruth]:
    """
    Draw one panel: loadings U(0, 1), factors N(0, I) (VAR(1) for the dynamic kind) and
    noise according to the kind.
    """
    problems = validate_dgp_spec(spec)
    if problems:
        raise InvalidConfig(problems)
    rng = np.random.default_rng(spec.seed)
    P = rng.uniform(0.0, 1.0, (spec.p, spec.k))
    Q = rng.uniform(0.0, 1.0, (spec.q, spec.k))
    F = _factors(spec, rng, spec.T)
    Y_clean = F @ Q.T
    raw_X = F @ P.T + _errors(spec, rng, spec.T, spec.p, "x")
    raw_Y = Y_clean + _errors(spec, rng, spec.T, spec.q, "y")
    truth = DgpTruth(P=P, Q=Q, F=F, Y_clean=Y_clean, raw_X=raw_X, raw_Y=raw_Y)
    return standardize(raw_X, raw_Y), truth


def generate_mixed_frequency(spec: DgpSpec, ratio: int) -> tuple[MixedFrequencyPanel, DgpTruth]:
    """
    High-frequency panel with ``ratio`` feature rows per period and period-average targets.

    Truth.F holds the high-frequency factors and Truth.raw_X the high-frequency features.
    """
    problems = validate_dgp_spec(spec)
    if ratio < 1:
        problems.append("ratio must be at least 1")
    if problems:
        raise InvalidConfig(problems)
    rng = np.random.default_rng(spec.seed)
    P = rng.uniform(0.0, 1.0, (spec.p, spec.k))
    Q = rng.uniform(0.0, 1.0, (spec.q, spec.k))
    F_hf = _factors(spec, rng, spec.T * ratio)
    raw_X = F_hf @ P.T + _errors(spec, rng, spec.T * ratio, spec.p, "x")
    Y_clean = F_hf.reshape(spec.T, ratio, spec.k).mean(axis=1) @ Q.T
    raw_Y = Y_clean + _errors(spec, rng, spec.T, spec.q, "y")
    truth = DgpTruth(P=P, Q=Q, F=F_hf, Y_clean=Y_clean, raw_X=raw_X, raw_Y=raw_Y)
    return standardize_mixed(raw_X, raw_Y, ratio), truth


def draw_masks(shape: tuple[int, int], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Missing-at-random mask; every column keeps at least one observed entry."""
    if not 0.0 <= rate <= MAX_MISSING_RATE:
        raise InvalidConfig([f"Missing rate must be in [0, {MAX_MISSING_RATE}], got {rate}"])
    mask = rng.random(shape) < rate
    for j in np.flatnonzero(mask.all(axis=0)):
        mask[rng.integers(shape[0]), j] = False
    return mask


def masked_panel(truth: DgpTruth, rate_x: float, rate_y: float, rng: np.random.Generator) -> DataPanel:
    """Standardize the truth's raw data after masking, with masked cells zero-imputed."""
    raw_X = np.where(draw_masks(truth.raw_X.shape, rate_x, rng), np.nan, truth.raw_X)
    raw_Y = np.where(draw_masks(truth.raw_Y.shape, rate_y, rng), np.nan, truth.raw_Y)
    return standardize(raw_X, raw_Y, missing_policy="zero_impute")


class ReplicationReport:
    """
    Tidy replication results: one row per cell, replication and method.

    Columns are the grid coordinates (when any), ``replication``, ``method``, ``r2`` (NaN
    when the fit failed) and ``error``.
    """

    def __init__(self, frame: pd.DataFrame, cell_columns: list[str] | None = None):
        self.frame = frame
        self.cell_columns = list(cell_columns or [])

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(self.frame["method"]))

    def summary(self) -> pd.DataFrame:
        """Median and mean R^2 per cell and method, with sample and failure counts."""
        keys = self.cell_columns + ["method"]
        grouped = self.frame.groupby(keys, sort=False)["r2"]
        table = grouped.agg(median="median", mean="mean", n_reps="size", n_ok="count").reset_index()
        table["n_failed"] = table["n_reps"] - table["n_ok"]
        return table.drop(columns="n_ok")

    def paired_differences(self, a: str, b: str) -> pd.Series:
        """R^2 of method a minus method b, per replication (and cell)."""
        wide = self.frame.pivot_table(
            index=self.cell_columns + ["replication"], columns="method", values="r2", dropna=False
        )
        return (wide[a] - wide[b]).rename(f"{a}-{b}")

    def win_fraction(self, a: str, b: str) -> float:
        """Share of paired replications where a is at least as good as b."""
        diffs = self.paired_differences(a, b).dropna()
        return float((diffs >= 0).mean()) if len(diffs) else float("nan")

    def ecdf(self, method: str) -> pd.DataFrame:
        values = np.sort(self.frame.loc[self.frame["method"] == method, "r2"].dropna().to_numpy())
        return pd.DataFrame({"r2": values, "probability": np.arange(1, len(values) + 1) / len(values)})

    def to_csv(self, path, summary: bool = False) -> None:
        (self.summary() if summary else self.frame).to_csv(path, index=False, float_format="%.10g")


def _replicate(
    spec: DgpSpec,
    methods: list[str],
    rep: int,
    seed_seq: np.random.SeedSequence,
    k: int,
    rate_x: float,
    rate_y: float,
    options: MethodOptions,
) -> list[dict]:
    data_seed, mask_seed, fit_seed = seed_seq.spawn(3)
    panel, truth = generate(spec.replace(seed=int(data_seed.generate_state(1)[0])))
    if rate_x > 0 or rate_y > 0:
        panel = masked_panel(truth, rate_x, rate_y, np.random.default_rng(mask_seed))
    fit_seed_value = int(fit_seed.generate_state(1)[0])
    rows = []
    for method in methods:
        row = {"replication": rep, "method": method, "r2": np.nan, "error": ""}
        try:
            result = fit_method(method, panel, k, seed=fit_seed_value, options=options)
            fitted_raw = panel.scaler.inverse_y(result.fitted)
            _, row["r2"] = r_squared(truth.raw_Y, fitted_raw)
        except PtfaError as exc:
            logger.warning("Replication %d: %s failed: %s", rep, method, exc)
            row["error"] = type(exc).__name__
        rows.append(row)
    return rows


def _run_cells(
    spec: DgpSpec,
    cells: list[dict],
    methods: list[str],
    n_reps: int,
    seed: int | None,
    k: int | None,
    jobs: int,
    options: MethodOptions | None,
) -> pd.DataFrame:
    if n_reps < 1:
        raise InvalidConfig(["n_reps must be at least 1"])
    methods = [parse_method(m) for m in methods]
    options = options or MethodOptions()
    k = spec.k if k is None else k
    base_seed = spec.seed if seed is None else seed
    # every cell reuses the same replication seeds so cells are paired
    rep_seeds = np.random.SeedSequence(base_seed).spawn(n_reps)
    jobs_list = []
    for cell in cells:
        cell_spec = spec.replace(**{key: cell[key] for key in ("sigma_x", "sigma_y") if key in cell})
        rate_x, rate_y = cell.get("missing_x", 0.0), cell.get("missing_y", 0.0)
        for rep in range(n_reps):
            jobs_list.append((cell, cell_spec, rep, rate_x, rate_y))

    def work(job):
        cell, cell_spec, rep, rate_x, rate_y = job
        rows = _replicate(cell_spec, methods, rep, rep_seeds[rep], k, rate_x, rate_y, options)
        return [{**cell, **row} for row in rows]

    results = run_parallel(work, jobs_list, jobs)
    return pd.DataFrame([row for rows in results for row in rows])


def run_replications(
    spec: DgpSpec,
    methods: list[str],
    n_reps: int,
    *,
    k: int | None = None,
    seed: int | None = None,
    missing_x: float = 0.0,
    missing_y: float = 0.0,
    jobs: int = 1,
    options: MethodOptions | None = None,
) -> ReplicationReport:
    """
    Fit every method on n_reps fresh draws and record the average R^2 of the in-sample fit
    against the complete raw targets.

    Per-replication failures are recorded (r2 NaN, error name) rather than raised.
    """
    cell = {}
    if missing_x or missing_y:
        cell = {"missing_x": missing_x, "missing_y": missing_y}
    frame = _run_cells(spec, [cell], methods, n_reps, seed, k, jobs, options)
    return ReplicationReport(frame.drop(columns=list(cell)), [])


def noise_grid(
    spec: DgpSpec,
    sigma_x_grid: list[float],
    sigma_y_grid: list[float],
    methods: list[str],
    n_reps: int,
    *,
    k: int | None = None,
    seed: int | None = None,
    jobs: int = 1,
    options: MethodOptions | None = None,
) -> ReplicationReport:
    """Replications over every (sigma_x, sigma_y) cell."""
    if any(s <= 0 for s in list(sigma_x_grid) + list(sigma_y_grid)):
        raise InvalidConfig(["Noise grid values must be positive"])
    cells = [{"sigma_x": float(sx), "sigma_y": float(sy)} for sx in sigma_x_grid for sy in sigma_y_grid]
    frame = _run_cells(spec, cells, methods, n_reps, seed, k, jobs, options)
    return ReplicationReport(frame, ["sigma_x", "sigma_y"])


def missing_grid(
    spec: DgpSpec,
    rho_x_grid: list[float],
    rho_y_grid: list[float],
    methods: list[str],
    n_reps: int,
    *,
    k: int | None = None,
    seed: int | None = None,
    jobs: int = 1,
    options: MethodOptions | None = None,
) -> ReplicationReport:
    """
    Replications over every (missing_x, missing_y) cell.

    R^2 is measured against the complete targets drawn before masking.
    """
    rates = list(rho_x_grid) + list(rho_y_grid)
    if any(not 0.0 <= r <= MAX_MISSING_RATE for r in rates):
        raise InvalidConfig([f"Missing rates must be in [0, {MAX_MISSING_RATE}]"])
    cells = [{"missing_x": float(rx), "missing_y": float(ry)} for rx in rho_x_grid for ry in rho_y_grid]
    frame = _run_cells(spec, cells, methods, n_reps, seed, k, jobs, options)
    return ReplicationReport(frame, ["missing_x", "missing_y"])
