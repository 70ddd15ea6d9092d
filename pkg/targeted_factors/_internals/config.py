"""
Command-line configuration.

Parses argv into a CliConfig and validates flag combinations.
"""

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

from targeted_factors._internals.methods import METHODS
from targeted_factors._internals.simulation import DGP_KINDS, MAX_MISSING_RATE
from targeted_factors._internals.volatility import DEFAULT_DECAY

Subcommand = Literal["fit", "simulate", "forecast"]

FIT_METHODS = ("ptfa", "ptfa-missing", "ptfa-mf", "ptfa-sv", "ptfa-dfm", "pls", "pca", "ppca")
GRIDS = ("none", "noise", "missing")


class UsageError(Exception):
    """Bad command line; reported with the usage line and exit code 1."""

    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which is reserved for non-convergence
    def error(self, message):
        raise UsageError(message, self.format_usage())


@dataclass(frozen=True)
class CliConfig:
    """Everything one invocation needs, after parsing."""

    command: Subcommand
    out: Path
    features: Path | None = None
    targets: Path | None = None
    data: Path | None = None
    method: str = "ptfa"
    methods: tuple[str, ...] = ("ptfa", "pls")
    k: tuple[int, ...] = (2,)
    tolerance: float = 1e-6
    max_iter: int = 1000
    lambda_x: float | None = None
    lambda_y: float | None = None
    ratio: int | None = None
    ratios: Path | None = None
    seed: int = 0
    dgp: str = "simple"
    reps: int = 10
    grid: str = "none"
    cells: tuple[int, int] = (3, 3)
    missing_x: float = 0.0
    missing_y: float = 0.0
    target_columns: tuple[str, ...] = ()
    window: int = 60
    horizons: tuple[int, ...] = (1,)
    jobs: int = 1
    verbosity: int = 0  # -1 quiet, 0 normal, 1 verbose

    @property
    def decay_x(self) -> float:
        return DEFAULT_DECAY if self.lambda_x is None else self.lambda_x

    @property
    def decay_y(self) -> float:
        return DEFAULT_DECAY if self.lambda_y is None else self.lambda_y


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _name_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _method_list(text: str) -> tuple[str, ...]:
    return tuple(name.lower() for name in _name_list(text))


def _cells(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        rows, cols = (int(part) for part in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}")
    return rows, cols


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptfa", description="Targeted factor models: fitting, simulation and forecasting")
    common = _Parser(add_help=False)
    common.add_argument("--out", type=Path, required=True, help="Output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tolerance", type=float, default=1e-6)
    common.add_argument("--max-iter", type=int, default=1000)
    common.add_argument("--lambda-x", type=float, default=None, help="EWMA decay for feature noise (ptfa-sv)")
    common.add_argument("--lambda-y", type=float, default=None, help="EWMA decay for target noise (ptfa-sv)")
    common.add_argument("-v", "--verbose", action="store_true", help="Log every EM iteration")
    common.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", parents=[common], help="Fit one model to CSV panels")
    fit.add_argument("--features", type=Path, required=True, help="Feature CSV (high-frequency for ptfa-mf)")
    fit.add_argument("--targets", type=Path, required=True, help="Target CSV")
    fit.add_argument("--method", default="ptfa", type=str.lower, choices=FIT_METHODS)
    fit.add_argument("--k", type=_int_list, default=(2,), help="Number of factors")
    fit.add_argument("--ratio", type=int, default=None, help="Feature rows per target row (ptfa-mf)")
    fit.add_argument("--ratios", type=Path, default=None, help="CSV of per-period ratios (ptfa-mf)")

    simulate = sub.add_parser("simulate", parents=[common], help="Run simulation replications")
    simulate.add_argument("--dgp", default="simple", type=str.lower, choices=DGP_KINDS)
    simulate.add_argument("--reps", type=int, default=10)
    simulate.add_argument("--grid", default="none", type=str.lower, choices=GRIDS)
    simulate.add_argument("--cells", type=_cells, default=(3, 3), help="Grid size as ROWSxCOLS")
    simulate.add_argument("--methods", type=_method_list, default=("ptfa", "pls"))
    simulate.add_argument("--k", type=_int_list, default=(2,))
    simulate.add_argument("--missing-x", type=float, default=0.0)
    simulate.add_argument("--missing-y", type=float, default=0.0)
    simulate.add_argument("--jobs", type=int, default=1)

    forecast = sub.add_parser("forecast", parents=[common], help="Rolling-window forecast evaluation")
    forecast.add_argument("--data", type=Path, required=True, help="Panel CSV holding features and targets")
    forecast.add_argument("--targets", type=_name_list, required=True, dest="target_columns",
                          help="Comma-separated target column names")
    forecast.add_argument("--window", type=int, default=60)
    forecast.add_argument("--horizons", type=_int_list, default=(1,))
    forecast.add_argument("--methods", type=_method_list, default=("ptfa", "pls"))
    forecast.add_argument("--k", type=_int_list, default=(1,))
    forecast.add_argument("--jobs", type=int, default=1)
    return parser


def parse_cli_config(argv: list[str] | None = None) -> CliConfig:
    """Parse command-line arguments; raises UsageError on malformed flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose and args.quiet:
        raise UsageError("-v and -q are mutually exclusive", parser.format_usage())
    values = vars(args)
    verbose, quiet = values.pop("verbose"), values.pop("quiet")
    return CliConfig(**values, verbosity=1 if verbose else -1 if quiet else 0)


def validate_cli_config(config: CliConfig) -> list[str]:
    """
    Validate a parsed configuration, returning a list of errors.

    Returns empty list if valid.
    """
    errors = []

    if not config.k or min(config.k) < 1:
        errors.append("k must be at least 1")
    if config.tolerance <= 0:
        errors.append("tolerance must be positive")
    if config.max_iter < 1:
        errors.append("max-iter must be at least 1")
    for name, value in (("lambda-x", config.lambda_x), ("lambda-y", config.lambda_y)):
        if value is not None and not 0.0 <= value < 1.0:
            errors.append(f"{name} must be in [0, 1)")
    if config.jobs == 0:
        errors.append("jobs cannot be 0")

    if config.command == "fit":
        if len(config.k) != 1:
            errors.append("fit takes a single k")
        if config.method == "ptfa-mf":
            if config.ratio is None and config.ratios is None:
                errors.append("ptfa-mf needs --ratio or --ratios")
            if config.ratio is not None and config.ratios is not None:
                errors.append("--ratio and --ratios are mutually exclusive")
            if config.ratio is not None and config.ratio < 1:
                errors.append("ratio must be at least 1")
        elif config.ratio is not None or config.ratios is not None:
            errors.append("--ratio/--ratios only apply to ptfa-mf")
        if config.method != "ptfa-sv" and (config.lambda_x is not None or config.lambda_y is not None):
            errors.append("--lambda-x/--lambda-y only apply to ptfa-sv")

    elif config.command == "simulate":
        if config.reps < 1:
            errors.append("reps must be at least 1")
        if len(config.k) != 1:
            errors.append("simulate takes a single k")
        if min(config.cells) < 1:
            errors.append("cells must be at least 1x1")
        for name, rate in (("missing-x", config.missing_x), ("missing-y", config.missing_y)):
            if not 0.0 <= rate <= MAX_MISSING_RATE:
                errors.append(f"{name} must be in [0, {MAX_MISSING_RATE}]")
        if config.grid != "none" and (config.missing_x or config.missing_y):
            errors.append("--missing-x/--missing-y cannot be combined with a grid")

    elif config.command == "forecast":
        if not config.target_columns:
            errors.append("forecast needs at least one target column")
        if config.window < 3:
            errors.append("window must be at least 3")
        if not config.horizons or min(config.horizons) < 1:
            errors.append("horizons must be positive")

    if config.command in ("simulate", "forecast"):
        if not config.methods:
            errors.append("at least one method is required")
        for method in config.methods:
            if method not in METHODS:
                errors.append(f"Unknown method: {method}")

    return errors
