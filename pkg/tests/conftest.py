"""Pytest fixtures and dense reference computations for targeted_factors tests."""

import numpy as np
import pytest

from targeted_factors._internals.model import FactorParams, initial_params, standardize
from targeted_factors._internals.simulation import DgpSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def simple_panel():
    """Standardized DGP-simple draw (T=200, p=10, q=3, k=2)."""
    panel, _ = generate(DgpSpec(kind="simple", seed=7))
    return panel


@pytest.fixture
def small_panel():
    """A short panel for dense-oracle checks."""
    panel, _ = generate(DgpSpec(kind="simple", T=12, p=4, q=2, k=2, seed=3))
    return panel


@pytest.fixture
def random_params():
    def make(p: int = 10, q: int = 3, k: int = 2, seed: int = 0, sigma2_x: float = 0.7, sigma2_y: float = 1.3):
        base = initial_params(p, q, k, seed=seed)
        return base.replace(sigma2_x=sigma2_x, sigma2_y=sigma2_y)
    return make


def raw_panel(rng: np.random.Generator, T: int = 50, p: int = 6, q: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Raw (unstandardized) data with nonzero means and scales."""
    F = rng.standard_normal((T, 2))
    raw_X = 3.0 + F @ rng.uniform(0, 2, (2, p)) + rng.standard_normal((T, p))
    raw_Y = -1.0 + 2.0 * (F @ rng.uniform(0, 2, (2, q)) + rng.standard_normal((T, q)))
    return raw_X, raw_Y


def conjugate_posterior(params: FactorParams, x_t: np.ndarray, y_t: np.ndarray,
                        sigma2_x: float | None = None, sigma2_y: float | None = None):
    """Per-row Gaussian conditioning of f ~ N(0, V_F) on z = L f + e."""
    sigma2_x = params.sigma2_x if sigma2_x is None else sigma2_x
    sigma2_y = params.sigma2_y if sigma2_y is None else sigma2_y
    L = params.loadings
    noise = np.concatenate([np.full(params.p, sigma2_x), np.full(params.q, sigma2_y)])
    C = L @ params.V_F @ L.T + np.diag(noise)
    gain = params.V_F @ L.T @ np.linalg.inv(C)
    mean = gain @ np.concatenate([x_t, y_t])
    cov = params.V_F - gain @ L @ params.V_F
    return mean, cov


def dense_dfm_posterior(A, f0, Sigma_v, G, rhs_obs):
    """
    Dense Gaussian conditioning for VAR(1) factors.

    Builds the prior of the stacked factor path explicitly and returns the posterior mean
    (T, k) and covariance (Tk, Tk) given the observation precision G per period and the
    per-period observation terms rhs_obs (T, k) = z_t' Sigma^-1 L.
    """
    T, k = rhs_obs.shape
    H = np.eye(T * k)
    for t in range(1, T):
        H[t * k:(t + 1) * k, (t - 1) * k:t * k] = -A
    S_inv = np.linalg.inv(Sigma_v)
    prior_precision = H.T @ np.kron(np.eye(T), S_inv) @ H
    shift = np.zeros(T * k)
    shift[:k] = A @ f0
    # prior mean solves H m = shift
    prior_mean = np.linalg.solve(H, shift)
    precision = prior_precision + np.kron(np.eye(T), G)
    cov = np.linalg.inv(precision)
    mean = cov @ (prior_precision @ prior_mean + rhs_obs.ravel())
    return mean.reshape(T, k), cov


def scalar_smoother(a: float, s2: float, g: float, b: np.ndarray, f0: float = 0.0):
    """
    Scalar Kalman filter and RTS smoother for f_t = a f_{t-1} + v_t with pseudo-observations.

    The observation enters through precision g and information b_t, i.e. obs_t = b_t / g
    with variance 1 / g. Returns smoothed means, variances and lag-one covariances.
    """
    T = len(b)
    r = 1.0 / g
    obs = b / g
    m_f, P_f, m_p, P_p = np.empty(T), np.empty(T), np.empty(T), np.empty(T)
    prev_m, prev_P = f0, 0.0
    for t in range(T):
        m_p[t] = a * prev_m
        P_p[t] = a * a * prev_P + s2
        gain = P_p[t] / (P_p[t] + r)
        m_f[t] = m_p[t] + gain * (obs[t] - m_p[t])
        P_f[t] = (1.0 - gain) * P_p[t]
        prev_m, prev_P = m_f[t], P_f[t]
    m_s, P_s, lag = m_f.copy(), P_f.copy(), np.zeros(max(T - 1, 0))
    for t in reversed(range(T - 1)):
        J = P_f[t] * a / P_p[t + 1]
        m_s[t] = m_f[t] + J * (m_s[t + 1] - m_p[t + 1])
        P_s[t] = P_f[t] + J * J * (P_s[t + 1] - P_p[t + 1])
        lag[t] = J * P_s[t + 1]
    return m_s, P_s, lag


@pytest.fixture
def raw_data(rng):
    return raw_panel(rng)


@pytest.fixture
def standardized(raw_data):
    raw_X, raw_Y = raw_data
    return standardize(raw_X, raw_Y)
