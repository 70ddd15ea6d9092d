"""Tests for command-line parsing and validation."""

from pathlib import Path

import pytest

from targeted_factors._internals.config import (
    CliConfig,
    UsageError,
    parse_cli_config,
    validate_cli_config,
)
from targeted_factors._internals.volatility import DEFAULT_DECAY

FIT = ["fit", "--features", "x.csv", "--targets", "y.csv", "--out", "out"]


class TestParse:
    def test_fit_defaults(self):
        config = parse_cli_config(FIT)
        assert config.command == "fit"
        assert config.features == Path("x.csv")
        assert config.method == "ptfa"
        assert config.k == (2,)
        assert config.verbosity == 0
        assert config.decay_x == DEFAULT_DECAY

    def test_method_case(self):
        assert parse_cli_config(FIT + ["--method", "PTFA-SV"]).method == "ptfa-sv"

    def test_lists(self):
        config = parse_cli_config(
            ["forecast", "--data", "d.csv", "--targets", "GDP, CPI", "--out", "o",
             "--methods", "PTFA,pls", "--k", "1,2,3", "--horizons", "1,12"]
        )
        assert config.target_columns == ("GDP", "CPI")
        assert config.methods == ("ptfa", "pls")
        assert config.k == (1, 2, 3)
        assert config.horizons == (1, 12)

    def test_cells(self):
        config = parse_cli_config(["simulate", "--out", "o", "--grid", "noise", "--cells", "4X2"])
        assert config.cells == (4, 2)

    def test_verbosity(self):
        assert parse_cli_config(FIT + ["-v"]).verbosity == 1
        assert parse_cli_config(FIT + ["-q"]).verbosity == -1
        with pytest.raises(UsageError):
            parse_cli_config(FIT + ["-v", "-q"])

    @pytest.mark.parametrize("argv", [
        [],
        ["fit", "--features", "x.csv"],
        FIT + ["--method", "lasso"],
        FIT + ["--k", "two"],
        ["simulate", "--out", "o", "--cells", "3by3"],
    ])
    def test_usage_errors(self, argv):
        with pytest.raises(UsageError) as excinfo:
            parse_cli_config(argv)
        assert excinfo.value.usage.startswith("usage:")


class TestValidate:
    def test_valid(self):
        assert validate_cli_config(parse_cli_config(FIT)) == []

    @pytest.mark.parametrize("extra,message", [
        (["--k", "0"], "k must be at least 1"),
        (["--k", "1,2"], "fit takes a single k"),
        (["--tolerance", "0"], "tolerance must be positive"),
        (["--max-iter", "0"], "max-iter must be at least 1"),
        (["--method", "ptfa-mf"], "ptfa-mf needs --ratio or --ratios"),
        (["--ratio", "3"], "--ratio/--ratios only apply to ptfa-mf"),
        (["--lambda-x", "0.9"], "--lambda-x/--lambda-y only apply to ptfa-sv"),
        (["--method", "ptfa-sv", "--lambda-y", "1.0"], "lambda-y must be in [0, 1)"),
    ])
    def test_fit_problems(self, extra, message):
        assert message in validate_cli_config(parse_cli_config(FIT + extra))

    def test_ratio_flags_exclusive(self):
        config = parse_cli_config(FIT + ["--method", "ptfa-mf", "--ratio", "3", "--ratios", "r.csv"])
        assert "--ratio and --ratios are mutually exclusive" in validate_cli_config(config)

    def test_simulate_problems(self):
        config = parse_cli_config(
            ["simulate", "--out", "o", "--reps", "0", "--missing-x", "0.95", "--methods", "ptfa,ridge", "--jobs", "0"]
        )
        problems = validate_cli_config(config)
        assert "reps must be at least 1" in problems
        assert "missing-x must be in [0, 0.9]" in problems
        assert "Unknown method: ridge" in problems
        assert "jobs cannot be 0" in problems

    def test_grid_excludes_fixed_rates(self):
        config = parse_cli_config(["simulate", "--out", "o", "--grid", "missing", "--missing-x", "0.2"])
        assert "--missing-x/--missing-y cannot be combined with a grid" in validate_cli_config(config)

    def test_forecast_problems(self):
        config = CliConfig(command="forecast", out=Path("o"), window=2, horizons=(0,))
        problems = validate_cli_config(config)
        assert "forecast needs at least one target column" in problems
        assert "window must be at least 3" in problems
        assert "horizons must be positive" in problems
