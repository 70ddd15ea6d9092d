"""Comparison methods: NIPALS partial least squares, PCA regression and closed-form PPCA regression."""

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg

from targeted_factors._internals.errors import (
    InvalidConfig,
    MissingValues,
    NegativeVarianceGap,
    RankDeficientScores,
    ZeroWeightVector,
    _checked_solve,
)
from targeted_factors._internals.model import DataPanel

logger = logging.getLogger(__name__)

NIPALS_TOLERANCE = 1e-10
NIPALS_MAX_ITER = 1000


@dataclass(frozen=True)
class BaselineFit:
    """Scores, the linear map from features to scores and the regression of targets on scores."""

    method: Literal["pls", "pca", "ppca"]
    scores: np.ndarray  # (T, k)
    x_loadings: np.ndarray  # (p, k)
    x_rotation: np.ndarray  # (p, k): scores = X @ x_rotation
    y_coefficients: np.ndarray  # (k, q)
    fitted: np.ndarray  # (T, q)
    noise_variance: float | None = None  # PPCA only


def predict_baseline(fit: BaselineFit, X_new: np.ndarray) -> np.ndarray:
    """Standardized target prediction for standardized features."""
    return np.asarray(X_new, dtype=float) @ fit.x_rotation @ fit.y_coefficients


def _complete_values(panel: DataPanel) -> tuple[np.ndarray, np.ndarray]:
    if np.isnan(panel.X).any() or np.isnan(panel.Y).any():
        raise MissingValues("Baselines need a panel without NaN entries")
    return panel.X, panel.Y


def _check_k(k: int, limit: int, what: str) -> None:
    if not 1 <= k <= limit:
        raise InvalidConfig([f"k must be between 1 and {limit} for {what}, got {k}"])


def _regress(scores: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return _checked_solve(scores.T @ scores, scores.T @ Y, RankDeficientScores, "score cross-product")


def _nipals(X: np.ndarray, Y: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weights W, X-loadings P and scores T; only X is deflated."""
    T_rows, p = X.shape
    E = X.copy()
    W = np.empty((p, k))
    P = np.empty((p, k))
    scores = np.empty((T_rows, k))
    tiny = np.finfo(float).tiny
    for a in range(k):
        u = Y[:, np.argmax(np.var(Y, axis=0))]
        for _ in range(NIPALS_MAX_ITER):
            w = E.T @ u
            norm = np.linalg.norm(w)
            if norm <= tiny:
                raise ZeroWeightVector(a)
            w = w / norm
            t = E @ w
            c = Y.T @ t / (t @ t)
            u_new = Y @ c / (c @ c)
            change = np.linalg.norm(u_new - u) / np.linalg.norm(u_new)
            u = u_new
            if change < NIPALS_TOLERANCE:
                break
        else:
            logger.debug("NIPALS component %d stopped at %d inner iterations", a, NIPALS_MAX_ITER)
        p_a = E.T @ t / (t @ t)
        E = E - np.outer(t, p_a)
        W[:, a], P[:, a], scores[:, a] = w, p_a, t
    return W, P, scores


def fit_nipals_pls(panel: DataPanel, k: int, per_target: bool = False) -> BaselineFit:
    """
    NIPALS partial least squares.

    The default extracts k components against all targets at once (PLS2). With
    ``per_target`` each target gets its own k components (PLS1) and the maps are stacked
    block-wise, so ``predict_baseline`` covers both variants.
    """
    X, Y = _complete_values(panel)
    _check_k(k, min(panel.p, panel.T), "PLS")
    if not per_target:
        W, P, scores = _nipals(X, Y, k)
        rotation = W @ linalg.solve(P.T @ W, np.eye(k))
        coefficients = _regress(scores, Y)
        return BaselineFit("pls", scores, P, rotation, coefficients, scores @ coefficients)

    q = panel.q
    rotations, loadings, all_scores = [], [], []
    coefficients = np.zeros((q * k, q))
    for j in range(q):
        y = Y[:, [j]]
        W, P, scores = _nipals(X, y, k)
        rotations.append(W @ linalg.solve(P.T @ W, np.eye(k)))
        loadings.append(P)
        all_scores.append(scores)
        coefficients[j * k:(j + 1) * k, j] = _regress(scores, y)[:, 0]
    scores = np.hstack(all_scores)
    return BaselineFit(
        "pls", scores, np.hstack(loadings), np.hstack(rotations), coefficients, scores @ coefficients
    )


def fit_pca_regression(panel: DataPanel, k: int) -> BaselineFit:
    """Regress the targets on the top-k principal component scores of X."""
    X, Y = _complete_values(panel)
    _check_k(k, min(panel.p, panel.T), "PCA")
    _, singular_values, Vt = linalg.svd(X, full_matrices=False)
    if singular_values[k - 1] <= singular_values[0] * max(X.shape) * np.finfo(float).eps:
        raise RankDeficientScores(f"X has numerical rank below k = {k}")
    rotation = Vt[:k].T
    scores = X @ rotation
    coefficients = _regress(scores, Y)
    return BaselineFit("pca", scores, rotation, rotation, coefficients, scores @ coefficients)


def fit_ppca_regression(panel: DataPanel, k: int) -> BaselineFit:
    """
    Closed-form probabilistic PCA on X, then regress the targets on the posterior-mean scores.

    sigma^2 is the mean of the trailing eigenvalues of X'X / T and
    W = U_k (Lambda_k - sigma^2 I)^(1/2).
    """
    X, Y = _complete_values(panel)
    if not 1 <= k < panel.p:
        raise InvalidConfig([f"PPCA needs 1 <= k < p = {panel.p}, got {k}"])
    eigenvalues, eigenvectors = linalg.eigh(X.T @ X / panel.T)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]
    sigma2 = float(np.mean(eigenvalues[k:]))
    gap = eigenvalues[:k] - sigma2
    if np.any(gap <= 0):
        raise NegativeVarianceGap(f"Retained eigenvalue does not exceed the noise variance {sigma2:.3e}")
    W = eigenvectors[:, :k] * np.sqrt(gap)
    rotation = W @ linalg.solve(W.T @ W + sigma2 * np.eye(k), np.eye(k), assume_a="pos")
    scores = X @ rotation
    coefficients = _regress(scores, Y)
    return BaselineFit("ppca", scores, W, rotation, coefficients, scores @ coefficients, noise_variance=sigma2)
