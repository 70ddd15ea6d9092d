"""Tests for the targeted dynamic factor model."""

import numpy as np
import pytest

from targeted_factors._internals.banded import BandInverse
from targeted_factors._internals.dynamics import (
    DfmConfig,
    DfmParams,
    DfmPosterior,
    dfm_marginal_log_likelihood,
    dfm_posterior,
    fit_dfm,
    predict_dfm,
    update_dynamics,
    validate_dfm_config,
)
from targeted_factors._internals.em_static import EmConfig, fit, posterior_moments
from targeted_factors._internals.errors import InvalidConfig, NonStationaryDynamicsWarning
from targeted_factors._internals.model import VARIANCE_FLOOR, marginal_log_likelihood, predict_targets, r_squared
from targeted_factors._internals.simulation import DgpSpec, generate
from tests.conftest import dense_dfm_posterior, scalar_smoother


def observation_terms(base, panel):
    G = base.P.T @ base.P / base.sigma2_x + base.Q.T @ base.Q / base.sigma2_y
    rhs = panel.X @ base.P / base.sigma2_x + panel.Y @ base.Q / base.sigma2_y
    return G, rhs


@pytest.fixture
def dynamic_panel():
    panel, _ = generate(DgpSpec(kind="dynamic", T=30, p=4, q=1, k=2, seed=5))
    return panel


@pytest.fixture
def dynamic_params(random_params):
    base = random_params(p=4, q=1).replace(V_F=np.diag([0.5, 1.2]))
    A = np.array([[0.6, 0.2], [-0.1, 0.4]])
    return DfmParams(A=A, f0=np.array([0.3, -0.7]), base=base)


class TestPosterior:
    def test_without_dynamics_is_static(self, simple_panel, random_params):
        base = random_params()
        post = dfm_posterior(DfmParams(A=np.zeros((2, 2)), f0=np.zeros(2), base=base), simple_panel)
        static = posterior_moments(base, simple_panel)
        assert np.max(np.abs(post.M - static.M)) < 1e-10
        assert np.allclose(post.band.diag_blocks, static.Omega)
        assert np.allclose(post.band.off_blocks, 0.0)
        assert np.allclose(post.V0, static.V)

    def test_matches_dense_conditioning(self, dynamic_panel, dynamic_params):
        G, rhs = observation_terms(dynamic_params.base, dynamic_panel)
        mean, cov = dense_dfm_posterior(dynamic_params.A, dynamic_params.f0, dynamic_params.Sigma_v, G, rhs)
        post = dfm_posterior(dynamic_params, dynamic_panel)
        assert np.max(np.abs(post.M - mean)) < 1e-9
        for t in range(30):
            assert np.allclose(post.band.diag_blocks[t], cov[2 * t:2 * t + 2, 2 * t:2 * t + 2])
        for t in range(29):
            assert np.allclose(post.band.off_blocks[t], cov[2 * t + 2:2 * t + 4, 2 * t:2 * t + 2])

    def test_band_sums(self, dynamic_panel, dynamic_params):
        G, rhs = observation_terms(dynamic_params.base, dynamic_panel)
        mean, cov = dense_dfm_posterior(dynamic_params.A, dynamic_params.f0, dynamic_params.Sigma_v, G, rhs)
        post = dfm_posterior(dynamic_params, dynamic_panel)
        V1 = sum(cov[2 * t:2 * t + 2, 2 * t:2 * t + 2] + np.outer(mean[t], mean[t]) for t in range(29))
        V10 = sum(cov[2 * t:2 * t + 2, 2 * t - 2:2 * t] + np.outer(mean[t], mean[t - 1]) for t in range(1, 30))
        assert np.allclose(post.V1, V1)
        assert np.allclose(post.V10, V10)
        assert np.allclose(post.V0 - post.M.T @ post.M, post.band.diag_blocks.sum(axis=0))
        assert np.allclose(post.m1, post.M[0])

    def test_log_determinant(self, dynamic_panel, dynamic_params):
        G, rhs = observation_terms(dynamic_params.base, dynamic_panel)
        _, cov = dense_dfm_posterior(dynamic_params.A, dynamic_params.f0, dynamic_params.Sigma_v, G, rhs)
        _, logdet_cov = np.linalg.slogdet(cov)
        assert dfm_posterior(dynamic_params, dynamic_panel).logdet_precision == pytest.approx(-logdet_cov)

    def test_scalar_kalman_smoother(self, random_params):
        panel, _ = generate(DgpSpec(kind="dynamic", T=40, p=3, q=1, k=1, seed=8))
        base = random_params(p=3, q=1, k=1).replace(V_F=np.array([[0.8]]))
        params = DfmParams(A=np.array([[0.7]]), f0=np.array([0.4]), base=base)
        G, rhs = observation_terms(base, panel)
        means, variances, lag = scalar_smoother(0.7, 0.8, G[0, 0], rhs[:, 0], f0=0.4)
        post = dfm_posterior(params, panel)
        assert np.max(np.abs(post.M[:, 0] - means)) < 1e-9
        assert np.allclose(post.band.diag_blocks[:, 0, 0], variances)
        assert np.allclose(post.band.off_blocks[:, 0, 0], lag)


def exact_ar_posterior(rates=(0.7, 0.4), T: int = 25) -> DfmPosterior:
    """Posterior with no uncertainty around a noiseless diagonal VAR(1) path."""
    path = np.column_stack([rate ** np.arange(1, T + 1) for rate in rates]) * np.array([1.0, -2.0])
    band = BandInverse(np.zeros((T, 2, 2)), np.zeros((T - 1, 2, 2)))
    return DfmPosterior(
        M=path,
        V0=path.T @ path,
        V1=path[:-1].T @ path[:-1],
        V10=path[1:].T @ path[:-1],
        m1=path[0].copy(),
        band=band,
        logdet_precision=0.0,
    )


class TestUpdateDynamics:
    def test_exact_autoregression(self, random_params):
        post = exact_ar_posterior()
        params = DfmParams(A=0.5 * np.eye(2), f0=np.zeros(2), base=random_params(p=4, q=1))
        A, f0, Sigma_v = update_dynamics(post, params, DfmConfig(EmConfig(k=2)))
        assert np.allclose(A, np.diag([0.7, 0.4]))
        assert np.allclose(f0, np.linalg.solve(A, post.m1))
        assert np.array_equal(Sigma_v, np.eye(2))

    def test_innovation_variance_floor(self, random_params):
        post = exact_ar_posterior((0.5, 0.9))
        params = DfmParams(A=0.5 * np.eye(2), f0=np.zeros(2), base=random_params(p=4, q=1))
        config = DfmConfig(EmConfig(k=2), fix_innovation_variance=False)
        _, _, Sigma_v = update_dynamics(post, params, config)
        assert np.allclose(Sigma_v, VARIANCE_FLOOR * np.eye(2), atol=1e-9)
        assert np.all(np.diag(Sigma_v) >= VARIANCE_FLOOR)

    def test_dynamics_held_fixed(self, random_params):
        A0 = np.array([[0.3, 0.0], [0.1, 0.2]])
        params = DfmParams(A=A0, f0=np.ones(2), base=random_params(p=4, q=1))
        A, f0, _ = update_dynamics(exact_ar_posterior(), params, DfmConfig(EmConfig(k=2), estimate_dynamics=False))
        assert np.array_equal(A, A0)
        assert np.array_equal(f0, np.ones(2))


class TestConfig:
    def test_non_diagonal_prior_rejected(self, dynamic_panel):
        config = DfmConfig(EmConfig(k=2, V_F=np.array([[1.0, 0.5], [0.5, 1.0]])))
        assert validate_dfm_config(config, 4, 1, 30)
        with pytest.raises(InvalidConfig):
            fit_dfm(dynamic_panel, config)

    def test_initial_A_shape(self):
        config = DfmConfig(EmConfig(k=2), initial_A=np.eye(3))
        assert validate_dfm_config(config, 4, 1, 30) == ["initial_A must be 2x2"]


class TestFitDfm:
    def test_without_dynamics_matches_static_fit(self, simple_panel):
        em = EmConfig(k=2, tolerance=1e-15, max_iter=60, seed=1)
        static = fit(simple_panel, em)
        result, params = fit_dfm(simple_panel, DfmConfig(em, estimate_dynamics=False))
        assert result.n_iter == static.n_iter
        assert np.array_equal(params.A, np.zeros((2, 2)))
        assert np.max(np.abs(result.params.P - static.params.P)) < 1e-8
        assert np.max(np.abs(result.params.Q - static.params.Q)) < 1e-8
        assert np.max(np.abs(result.posterior.M - static.posterior.M)) < 1e-8
        assert np.isnan(result.foc_residual)

    def test_loglik_monotone_with_fixed_dynamics(self):
        panel, _ = generate(DgpSpec(kind="dynamic", T=20, p=4, q=1, k=1, seed=2))
        em = EmConfig(k=1, max_iter=40, seed=0, track_loglik=True)
        result, _ = fit_dfm(panel, DfmConfig(em, estimate_dynamics=False, initial_A=np.array([[0.6]])))
        assert np.all(np.diff(result.loglik_path) >= -1e-8)

    def test_loglik_monotone_with_estimated_dynamics(self, dynamic_panel):
        em = EmConfig(k=2, tolerance=1e-10, max_iter=100, seed=0, track_loglik=True)
        result, params = fit_dfm(dynamic_panel, DfmConfig(em, fix_innovation_variance=False))
        assert len(result.loglik_path) > 10
        assert np.all(np.diff(result.loglik_path) >= -1e-8)
        assert not np.allclose(params.A, 0.5 * np.eye(2))
        assert not np.allclose(params.Sigma_v, np.eye(2))

    def test_loglik_without_dynamics_matches_static(self, small_panel, random_params):
        base = random_params(p=4, q=2)
        params = DfmParams(A=np.zeros((2, 2)), f0=np.zeros(2), base=base)
        assert dfm_marginal_log_likelihood(params, small_panel) == pytest.approx(
            marginal_log_likelihood(base, small_panel)
        )

    def test_recovers_persistence(self):
        panel, _ = generate(DgpSpec(kind="dynamic", T=200, p=10, q=3, k=1, persistence=0.8, seed=4))
        _, params = fit_dfm(panel, DfmConfig(EmConfig(k=1, max_iter=500, seed=0)))
        assert params.A[0, 0] == pytest.approx(0.8, abs=0.15)

    def test_innovation_variance_estimated(self, dynamic_panel):
        result, params = fit_dfm(
            dynamic_panel, DfmConfig(EmConfig(k=2, max_iter=100, seed=0), fix_innovation_variance=False)
        )
        assert np.all(np.diag(params.Sigma_v) >= VARIANCE_FLOOR)
        assert np.array_equal(result.params.V_F, params.Sigma_v)

    def test_nonstationary_warning(self, dynamic_panel):
        config = DfmConfig(EmConfig(k=2, max_iter=5, seed=0), estimate_dynamics=False, initial_A=1.2 * np.eye(2))
        with pytest.warns(NonStationaryDynamicsWarning):
            fit_dfm(dynamic_panel, config)


class TestPredictDfm:
    def test_without_dynamics_matches_static_prediction(self, random_params, rng):
        base = random_params().replace(V_F=np.diag([0.7, 1.4]))
        params = DfmParams(A=np.zeros((2, 2)), f0=np.zeros(2), base=base)
        X_new = rng.standard_normal((4, 10))
        pred = predict_dfm(params, rng.standard_normal(2), np.eye(2), X_new)
        assert np.allclose(pred, predict_targets(base, X_new))

    def test_shapes(self, dynamic_panel):
        result, params = fit_dfm(dynamic_panel, DfmConfig(EmConfig(k=2, max_iter=50, seed=0)))
        post = dfm_posterior(params, dynamic_panel)
        pred = predict_dfm(params, post.M[-1], post.last_cov, dynamic_panel.X[:3])
        assert pred.shape == (3, 1)
        assert np.all(np.isfinite(pred))


@pytest.mark.slow
class TestDynamicsRecovery:
    def test_autoregression_from_oracle_factors(self, random_params):
        params = DfmParams(A=0.5 * np.eye(1), f0=np.zeros(1), base=random_params(p=4, q=1, k=1))
        errors = []
        for seed in range(50):
            rng = np.random.default_rng(seed)
            path = np.empty((500, 1))
            path[0] = rng.standard_normal(1) / np.sqrt(1.0 - 0.81)
            for t in range(1, 500):
                path[t] = 0.9 * path[t - 1] + rng.standard_normal(1)
            post = DfmPosterior(
                M=path,
                V0=path.T @ path,
                V1=path[:-1].T @ path[:-1],
                V10=path[1:].T @ path[:-1],
                m1=path[0].copy(),
                band=BandInverse(np.zeros((500, 1, 1)), np.zeros((499, 1, 1))),
                logdet_precision=0.0,
            )
            A, _, _ = update_dynamics(post, params, DfmConfig(EmConfig(k=1)))
            errors.append(abs(A[0, 0] - 0.9))
        assert np.median(errors) < 0.05

    def test_persistent_factors_fit_at_least_as_well_as_static(self):
        static_r2, dynamic_r2 = [], []
        for seed in range(20):
            panel, _ = generate(DgpSpec(kind="dynamic", persistence=0.8, seed=seed))
            em = EmConfig(k=2, max_iter=300, seed=seed)
            static_r2.append(r_squared(panel.Y, fit(panel, em).fitted())[1])
            result, _ = fit_dfm(panel, DfmConfig(em))
            dynamic_r2.append(r_squared(panel.Y, result.fitted())[1])
        assert np.median(dynamic_r2) >= np.median(static_r2) - 0.01
