"""targeted_factors - Probabilistic targeted factor analysis."""

__version__ = "0.1.0"

from targeted_factors._internals.estimator import TargetedFactorModel  # noqa: E402

__all__ = ["TargetedFactorModel"]
