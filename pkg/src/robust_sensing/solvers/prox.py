"""Block soft thresholding and the vector Huber cost."""

from __future__ import annotations

import numpy as np


def block_soft_threshold(v, lam) -> np.ndarray:
    """Prox of ``lam * ||.||_2``: minimizer of ``0.5||v - u||^2 + lam ||u||_2``.

    Returns 0 when ``||v|| <= lam`` (ties go to zero), otherwise
    ``v * (1 - lam / ||v||)``.
    """
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv <= lam:
        return np.zeros_like(v)
    return v * (1.0 - lam / nv)


def block_soft_threshold_rows(V: np.ndarray, lam) -> np.ndarray:
    """Row-wise block soft threshold of a ``(k, m)`` array; ``lam`` scalar or ``(k,)``."""
    norms = np.sqrt(np.einsum("ij,ij->i", V, V))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), norms.shape)
    scale = np.zeros_like(norms)
    keep = norms > lam
    scale[keep] = 1.0 - lam[keep] / norms[keep]
    return V * scale[:, None]


def vector_huber_cost(residual_norms, lam: float) -> float:
    """Sum of the block Huber function over residual norms.

    Each term is ``0.5 r**2`` for ``r <= lam`` and ``lam*r - lam**2/2`` above.
    """
    r = np.asarray(residual_norms, dtype=float)
    if np.any(r < 0):
        raise ValueError("residual norms must be non-negative")
    quad = r <= lam
    return float(np.sum(np.where(quad, 0.5 * r * r, lam * r - 0.5 * lam * lam)))


def scalar_huber(r, tau: float) -> np.ndarray:
    """Elementwise Huber function with cutoff ``tau``."""
    a = np.abs(np.asarray(r, dtype=float))
    return np.where(a <= tau, 0.5 * a * a, tau * a - 0.5 * tau * tau)
