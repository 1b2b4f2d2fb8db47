"""Dense linear algebra and seeded sampling shared by solvers and experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "RANK_TOL",
    "RankDeficientError",
    "RngStream",
    "least_squares",
    "numerical_rank",
    "orthonormal_range",
    "projection_pair",
    "sample",
    "toeplitz_sqrt_pair",
]

# relative to the largest singular value
RANK_TOL = 1e-10


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when a matrix expected to have full column rank does not."""


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Two streams with the same key produce bit-identical draws. The stream id is
    normally a trial index, so trials can run in any order or process.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        mask = (1 << 64) - 1
        key = np.array([self.seed & mask, self.stream_id & mask], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def numerical_rank(A, tol: float = RANK_TOL) -> int:
    """Rank of ``A`` with singular values below ``tol * s_max`` treated as zero."""
    A = _as_matrix(A)
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def least_squares(A, b) -> np.ndarray:
    """Minimize ``||b - A x||_2``.

    Uses Householder QR when ``A`` has full column rank. Otherwise (including
    the underdetermined case) the minimum-norm minimizer is returned via the
    SVD-based pseudo-inverse.
    """
    A = _as_matrix(A)
    b = np.asarray(b, dtype=float)
    squeeze = b.ndim == 1
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: A has {A.shape[0]} rows, b has {b.shape[0]}")
    rows, cols = A.shape
    if rows >= cols and cols > 0:
        Q, R = np.linalg.qr(A, mode="reduced")
        if numerical_rank(R) == cols:
            return scipy.linalg.solve_triangular(R, Q.T @ b)
    x = np.linalg.pinv(A, rcond=RANK_TOL) @ b
    return x if not squeeze else np.asarray(x).reshape(cols)


def orthonormal_range(A) -> np.ndarray:
    """Thin ``Q`` factor of a full-column-rank ``A``; raises otherwise."""
    A = _as_matrix(A)
    rows, cols = A.shape
    if cols > rows:
        raise RankDeficientError(f"{rows}x{cols} matrix cannot have full column rank")
    Q, R = np.linalg.qr(A, mode="reduced")
    if numerical_rank(R) < cols:
        raise RankDeficientError("matrix is column-rank deficient")
    return Q


def projection_pair(A) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal projectors onto ``range(A)`` and its complement.

    Parameters
    ----------
    A : (rows, n) array_like
        Full column rank, ``n <= rows``.

    Returns
    -------
    P, P_perp : (rows, rows) ndarray
        ``P = A (A^T A)^{-1} A^T`` and ``I - P``.
    """
    Q = orthonormal_range(A)
    P = Q @ Q.T
    P = 0.5 * (P + P.T)
    return P, np.eye(P.shape[0]) - P


def sample(dist: str, shape, rng: RngStream | np.random.Generator,
           mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
    """I.i.d. draws from a Gaussian or a variance-matched Laplacian.

    The Laplacian is scaled so its variance equals ``sigma**2``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if dist == "gaussian":
        return gen.normal(mu, sigma, size=shape)
    if dist == "laplacian":
        return gen.laplace(mu, sigma / np.sqrt(2.0), size=shape)
    raise ValueError(f"unknown distribution {dist!r}")


def toeplitz_sqrt_pair(first_column) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric Toeplitz matrix and its inverse square root.

    Raises ``ValueError`` if the matrix is not positive definite.
    """
    c = np.asarray(first_column, dtype=float).ravel()
    Sigma = scipy.linalg.toeplitz(c)
    evals, evecs = np.linalg.eigh(Sigma)
    if evals.min() <= RANK_TOL * max(evals.max(), 0.0) or evals.min() <= 0:
        raise ValueError(f"Toeplitz matrix is not positive definite (min eigenvalue {evals.min():.3g})")
    W = (evecs / np.sqrt(evals)) @ evecs.T
    W = 0.5 * (W + W.T)
    return Sigma, W
