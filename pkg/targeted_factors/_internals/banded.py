"""Block-banded symmetric positive-definite matrices with one sub-diagonal block band."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from targeted_factors._internals.errors import DimensionMismatch, NotPositiveDefinite


@dataclass(frozen=True)
class BlockBandedMatrix:
    """
    Symmetric Tk x Tk matrix stored by its k x k blocks.

    diag_blocks[t] is block (t, t); off_blocks[t] is block (t + 1, t). Upper blocks are
    implied by symmetry.
    """

    diag_blocks: np.ndarray  # (T, k, k)
    off_blocks: np.ndarray  # (T - 1, k, k)

    def __post_init__(self):
        if self.diag_blocks.ndim != 3 or self.diag_blocks.shape[1] != self.diag_blocks.shape[2]:
            raise DimensionMismatch("diag_blocks must have shape (T, k, k)")
        expected = (max(self.T - 1, 0), self.k, self.k)
        if self.off_blocks.shape != expected:
            raise DimensionMismatch(f"off_blocks must have shape {expected}, got {self.off_blocks.shape}")

    @property
    def T(self) -> int:
        return self.diag_blocks.shape[0]

    @property
    def k(self) -> int:
        return self.diag_blocks.shape[1]

    @property
    def bandwidth_blocks(self) -> int:
        return 1

    def to_dense(self) -> np.ndarray:
        return _to_dense(self.diag_blocks, self.off_blocks, symmetric=True)


@dataclass(frozen=True)
class BandedCholesky:
    """Lower block-bidiagonal factor R with R R' equal to the factorized matrix."""

    diag_blocks: np.ndarray  # (T, k, k) lower triangular
    off_blocks: np.ndarray  # (T - 1, k, k)

    @property
    def T(self) -> int:
        return self.diag_blocks.shape[0]

    @property
    def k(self) -> int:
        return self.diag_blocks.shape[1]

    def to_dense(self) -> np.ndarray:
        return _to_dense(self.diag_blocks, self.off_blocks, symmetric=False)

    def logdet(self) -> float:
        """Log-determinant of the factorized matrix."""
        diagonals = np.diagonal(self.diag_blocks, axis1=1, axis2=2)
        return float(2.0 * np.sum(np.log(diagonals)))


@dataclass(frozen=True)
class BandInverse:
    """Diagonal blocks Omega[t, t] and sub-diagonal blocks Omega[t + 1, t] of a dense inverse."""

    diag_blocks: np.ndarray  # (T, k, k)
    off_blocks: np.ndarray  # (T - 1, k, k)


def _to_dense(diag_blocks: np.ndarray, off_blocks: np.ndarray, symmetric: bool) -> np.ndarray:
    T, k, _ = diag_blocks.shape
    dense = np.zeros((T * k, T * k))
    for t in range(T):
        dense[t * k:(t + 1) * k, t * k:(t + 1) * k] = diag_blocks[t]
    for t in range(T - 1):
        rows = slice((t + 1) * k, (t + 2) * k)
        cols = slice(t * k, (t + 1) * k)
        dense[rows, cols] = off_blocks[t]
        if symmetric:
            dense[cols, rows] = off_blocks[t].T
    return dense


def assemble_dfm_precision(A: np.ndarray, V_F_inv: np.ndarray, G: np.ndarray, T: int) -> BlockBandedMatrix:
    """
    Posterior precision of stacked VAR(1) factors.

    Diagonal blocks are V_F_inv + A' V_F_inv A + G for every period but the last, which gets
    V_F_inv + G. Sub-diagonal blocks are -V_F_inv A.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    V_F_inv = np.atleast_2d(np.asarray(V_F_inv, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    k = A.shape[0]
    if A.shape != (k, k) or V_F_inv.shape != (k, k) or G.shape != (k, k):
        raise DimensionMismatch("A, V_F_inv and G must all be k x k")
    if T < 1:
        raise DimensionMismatch("T must be at least 1")
    base = V_F_inv + G
    diag_blocks = np.repeat(base[np.newaxis], T, axis=0)
    diag_blocks[:-1] += A.T @ V_F_inv @ A
    off_blocks = np.repeat((-V_F_inv @ A)[np.newaxis], T - 1, axis=0)
    return BlockBandedMatrix(diag_blocks=diag_blocks, off_blocks=off_blocks)


def cholesky(B: BlockBandedMatrix) -> BandedCholesky:
    """
    Block Cholesky factorization R R' = B.

    Raises:
        NotPositiveDefinite: When a Schur complement fails to factorize; carries the block index.
    """
    T, k = B.T, B.k
    diag = np.empty_like(B.diag_blocks)
    off = np.empty_like(B.off_blocks)
    for t in range(T):
        schur = B.diag_blocks[t]
        if t > 0:
            schur = schur - off[t - 1] @ off[t - 1].T
        try:
            diag[t] = linalg.cholesky(schur, lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefinite(t, str(exc)) from exc
        if t < T - 1:
            # R[t+1, t] = B[t+1, t] R[t, t]^-T
            off[t] = linalg.solve_triangular(diag[t], B.off_blocks[t].T, lower=True).T
    return BandedCholesky(diag_blocks=diag, off_blocks=off)


def solve(F: BandedCholesky, rhs: np.ndarray) -> np.ndarray:
    """Solve B x = rhs by forward and backward block substitution on the factor."""
    rhs = np.asarray(rhs, dtype=float)
    T, k = F.T, F.k
    if rhs.shape[0] != T * k or rhs.ndim not in (1, 2):
        raise DimensionMismatch(f"rhs must have {T * k} rows, got shape {rhs.shape}")
    blocks = rhs.reshape(T, k, -1)
    y = np.empty_like(blocks)
    for t in range(T):
        b = blocks[t] if t == 0 else blocks[t] - F.off_blocks[t - 1] @ y[t - 1]
        y[t] = linalg.solve_triangular(F.diag_blocks[t], b, lower=True)
    x = np.empty_like(blocks)
    for t in reversed(range(T)):
        b = y[t] if t == T - 1 else y[t] - F.off_blocks[t].T @ x[t + 1]
        x[t] = linalg.solve_triangular(F.diag_blocks[t], b, lower=True, trans="T")
    return x.reshape(rhs.shape)


def partial_inverse_band(F: BandedCholesky) -> BandInverse:
    """Diagonal and first sub-diagonal blocks of B^-1 by backward recursion on the factor."""
    T, k = F.T, F.k
    eye = np.eye(k)
    diag = np.empty((T, k, k))
    off = np.empty((max(T - 1, 0), k, k))
    inv_last = linalg.solve_triangular(F.diag_blocks[-1], eye, lower=True)
    diag[-1] = inv_last.T @ inv_last
    for j in reversed(range(T - 1)):
        R_inv = linalg.solve_triangular(F.diag_blocks[j], eye, lower=True)
        off[j] = -diag[j + 1] @ F.off_blocks[j] @ R_inv
        diag[j] = (R_inv.T - off[j].T @ F.off_blocks[j]) @ R_inv
    diag = 0.5 * (diag + np.swapaxes(diag, 1, 2))
    return BandInverse(diag_blocks=diag, off_blocks=off)
