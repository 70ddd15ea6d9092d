"""Tests for the uniform method interface."""

import numpy as np
import pytest

from targeted_factors._internals.em_missing import fit_missing
from targeted_factors._internals.em_static import EmConfig, fit
from targeted_factors._internals.methods import METHODS, MethodOptions, fit_method, parse_method
from targeted_factors._internals.simulation import DgpSpec, generate, masked_panel

FAST = MethodOptions(max_iter=50)


class TestParseMethod:
    def test_normalizes(self):
        assert parse_method("  PTFA-SV ") == "ptfa-sv"

    def test_unknown(self):
        with pytest.raises(ValueError, match="Unknown method"):
            parse_method("lasso")


class TestFitMethod:
    @pytest.mark.parametrize("method", METHODS)
    def test_shapes(self, simple_panel, method):
        result = fit_method(method, simple_panel, 2, seed=0, options=FAST)
        assert result.method == method
        assert result.fitted.shape == (simple_panel.T, simple_panel.q)
        prediction = result.predict(simple_panel.X[:5])
        assert prediction.shape == (5, simple_panel.q)
        assert np.all(np.isfinite(prediction))

    def test_null(self, simple_panel):
        result = fit_method("null", simple_panel, 2)
        assert np.array_equal(result.fitted, np.zeros_like(simple_panel.Y))

    def test_ptfa_matches_static_fit(self, simple_panel):
        result = fit_method("ptfa", simple_panel, 2, seed=3, options=FAST)
        expected = fit(simple_panel, EmConfig(k=2, max_iter=50, seed=3))
        assert np.array_equal(result.fitted, expected.fitted())
        assert result.converged == expected.converged

    def test_ptfa_on_masked_panel_imputes(self, rng):
        _, truth = generate(DgpSpec(seed=6))
        panel = masked_panel(truth, 0.2, 0.1, rng)
        result = fit_method("ptfa", panel, 2, seed=0, options=FAST)
        expected, _ = fit_missing(panel, EmConfig(k=2, max_iter=50, seed=0))
        assert np.allclose(result.fitted, expected.fitted())

    def test_imputed_variant_uses_zero_fill(self, rng):
        _, truth = generate(DgpSpec(seed=6))
        panel = masked_panel(truth, 0.2, 0.0, rng)
        result = fit_method("ptfa-imputed", panel, 2, seed=0, options=FAST)
        expected = fit(panel.without_masks(), EmConfig(k=2, max_iter=50, seed=0))
        assert np.allclose(result.fitted, expected.fitted())

    def test_baseline_on_masked_panel(self, rng):
        _, truth = generate(DgpSpec(seed=8))
        panel = masked_panel(truth, 0.3, 0.0, rng)
        result = fit_method("pls", panel, 2)
        assert np.all(np.isfinite(result.fitted))

