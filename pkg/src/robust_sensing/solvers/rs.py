"""Noise-free robust sensing estimators: LS, genie LS, sum-of-norms and its
reweighted log-surrogate, and l1-error regression."""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.optimize

from ..linalg import RankDeficientError, least_squares, orthonormal_range
from ..model import SensingProblem, SolverConfig, SolverOutput
from .prox import block_soft_threshold_rows


POLISH_EVERY = 10


def _qr_full_rank(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Q = orthonormal_range(A)
    R = Q.T @ A
    return Q, R


def solve_ls(problem: SensingProblem) -> SolverOutput:
    """Ordinary least squares on the stacked system."""
    if problem.A.shape[0] < problem.n:
        raise RankDeficientError("stacked system has fewer rows than unknowns")
    orthonormal_range(problem.A)
    x = least_squares(problem.A, problem.b)
    return SolverOutput(x_hat=x, residual_norms=problem.residual_norms(x), iterations=1)


def solve_genie_ls(problem: SensingProblem, reliable) -> SolverOutput:
    """Least squares restricted to the known reliable sensors (benchmark only)."""
    sub = problem.subproblem(reliable)
    orthonormal_range(sub.A)
    x = least_squares(sub.A, sub.b)
    return SolverOutput(x_hat=x, residual_norms=problem.residual_norms(x), iterations=1)


def sum_of_norms(problem: SensingProblem, x, weights=None) -> float:
    norms = problem.residual_norms(x)
    if weights is None:
        return float(norms.sum())
    return float(np.dot(weights, norms))


def _polish(problem: SensingProblem, Q: np.ndarray, w: np.ndarray, zero: np.ndarray,
            dual: np.ndarray) -> np.ndarray | None:
    """Exact optimum for a guessed set of zero-residual blocks, or ``None``.

    ``zero`` flags blocks believed to have zero residual at the optimum. If
    they pin ``x`` down, solve them exactly and certify optimality by finding
    block subgradients ``q_i`` (``||q_i|| <= w_i``) on the zero blocks with
    ``A^T q = 0``. ``dual`` (the splitting dual, in subgradient units) seeds
    the search; the affine correction keeps the certificate cheap.
    """
    A, b, k, m, n = problem.A, problem.b, problem.k, problem.m, problem.n
    idx = np.flatnonzero(zero)
    if idx.size * m < n:
        return None
    rows = problem.rows_of(idx)
    AZ, bZ = A[rows], b[rows]
    try:
        QZ = orthonormal_range(AZ)
    except RankDeficientError:
        return None
    RZ = QZ.T @ AZ
    x = scipy.linalg.solve_triangular(RZ, QZ.T @ bZ)
    scale = 1.0 + np.linalg.norm(bZ)
    if np.linalg.norm(bZ - AZ @ x) > 1e-10 * scale:
        return None
    res = (b - A @ x).reshape(k, m)
    norms = np.linalg.norm(res, axis=1)
    tiny = 1e-12 * (1.0 + np.linalg.norm(b))
    on = norms <= tiny
    if not np.array_equal(on[idx], np.ones(idx.size, dtype=bool)):
        return None
    off = ~on
    h = A[problem.rows_of(np.flatnonzero(off))].T @ (
        (w[off] / norms[off])[:, None] * res[off]).ravel()
    rows_on = problem.rows_of(np.flatnonzero(on))
    A_on = A[rows_on]
    Q_on = orthonormal_range(A_on) if A_on.shape[0] >= n else None
    if Q_on is None:
        return None
    R_on = Q_on.T @ A_on
    w_on = w[on]
    # affine set {q : A_on^T q = -h}; least-norm correction of each seed
    seeds = [dual[rows_on], np.zeros(rows_on.size)]
    for q0 in seeds:
        t = scipy.linalg.solve_triangular(R_on, A_on.T @ q0 + h, trans="T")
        q = q0 - Q_on @ t
        qn = np.linalg.norm(q.reshape(-1, m), axis=1)
        if np.all(qn <= w_on * (1.0 + 1e-9) + 1e-12):
            return x
    return None


def solve_p1(problem: SensingProblem, cfg: SolverConfig | None = None,
             weights=None) -> SolverOutput:
    """Minimize ``sum_i w_i ||b_i - A_i x||_2`` by ADMM on ``r = b - A x``.

    The x-update is a least-squares projection (weights do not enter it), the
    r-update a per-block soft threshold at ``w_i / rho``. ``rho`` is adapted by
    residual balancing. Whenever the set of exactly-zero blocks in ``r``
    changes, and every ``POLISH_EVERY`` iterations for the ``ceil(n/m)``
    blocks with the smallest residuals, a polishing step solves that
    subsystem exactly and stops early if a subgradient certificate proves
    the result optimal. If
    ``max_iters`` runs out the iterate with the lowest objective is returned
    with ``converged=False``.
    """
    cfg = cfg or SolverConfig()
    A, b, k, m, n = problem.A, problem.b, problem.k, problem.m, problem.n
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (k,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be k finite non-negative values")
    Q, R = _qr_full_rank(A)

    rho = cfg.rho
    r = np.zeros_like(b)
    y = np.zeros_like(b)            # scaled dual
    norm_b = np.linalg.norm(b)
    sqrt_rows, sqrt_n = np.sqrt(b.size), np.sqrt(n)

    best_obj, best_x = np.inf, None
    trace = []
    converged = False
    last_zero = last_guess = None
    min_blocks = -(-n // m)
    x = None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        c = Q.T @ (b - r - y)
        Ax = Q @ c
        v = b - Ax - y
        R_blocks = block_soft_threshold_rows(v.reshape(k, m), w / rho)
        r_new = R_blocks.ravel()
        p = r_new + Ax - b
        y += p
        dr = r_new - r
        r = r_new

        res = (b - Ax).reshape(k, m)
        res_norms = np.sqrt(np.einsum("ij,ij->i", res, res))
        obj = float(np.dot(w, res_norms))
        trace.append(obj)
        if obj < best_obj:
            best_obj, best_x = obj, c

        zero = ~R_blocks.any(axis=1)
        guesses = []
        if zero.any() and (last_zero is None or not np.array_equal(zero, last_zero)):
            last_zero = zero
            guesses.append(zero)
        if it % POLISH_EVERY == 0:
            # vertex guess: the fewest smallest-residual blocks that can pin x down
            smallest = np.zeros(k, dtype=bool)
            smallest[np.argsort(res_norms, kind="stable")[:min_blocks]] = True
            if last_guess is None or not np.array_equal(smallest, last_guess):
                last_guess = smallest
                guesses.append(smallest)
        for guess in guesses:
            xp = _polish(problem, Q, w, guess, -rho * y)
            if xp is not None:
                x = xp
                break
        if x is not None:
            trace.append(sum_of_norms(problem, x, w))
            converged = True
            break

        p_norm = np.linalg.norm(p)
        d_norm = rho * np.linalg.norm(R.T @ (Q.T @ dr))
        eps_pri = sqrt_rows * cfg.abs_tol + cfg.rel_tol * max(np.linalg.norm(Ax), np.linalg.norm(r), norm_b)
        eps_dual = sqrt_n * cfg.abs_tol + cfg.rel_tol * rho * np.linalg.norm(R.T @ (Q.T @ y))
        if p_norm <= eps_pri and d_norm <= eps_dual:
            converged = True
            break
        if p_norm > 10.0 * d_norm:
            rho *= 2.0
            y /= 2.0
        elif d_norm > 10.0 * p_norm:
            rho /= 2.0
            y *= 2.0

    if x is None:
        x = scipy.linalg.solve_triangular(R, c if converged else best_x)
    return SolverOutput(x_hat=x, residual_norms=problem.residual_norms(x),
                        cost_trace=trace, iterations=it, converged=converged)


def log_surrogate_cost(residual_norms, delta: float) -> float:
    """``sum_i log(||r_i|| + delta)``."""
    return float(np.sum(np.log(np.asarray(residual_norms) + delta)))


def solve_p2(problem: SensingProblem, cfg: SolverConfig | None = None,
             outer_iters: int = 1, start: SolverOutput | None = None) -> SolverOutput:
    """Reweighted sum-of-norms for the log surrogate (majorization-minimization).

    Starts from the unweighted sum-of-norms solution; each outer pass solves
    the weighted problem with ``w_i = 1 / (||b_i - A_i x|| + delta)`` taken at
    the previous iterate. Stops after ``outer_iters`` passes or when the
    relative change in ``x`` drops below ``epsilon``. ``cost_trace`` holds the
    log-surrogate objective after each pass (the first entry is the start).
    ``start`` may pass in an already computed unweighted solution.
    """
    cfg = cfg or SolverConfig()
    if outer_iters < 0:
        raise ValueError("outer_iters must be >= 0")
    out = start if start is not None else solve_p1(problem, cfg)
    if outer_iters == 0:
        return out
    x = out.x_hat
    trace = [log_surrogate_cost(out.residual_norms, cfg.delta)]
    iters, converged = out.iterations, out.converged
    for _ in range(outer_iters):
        w = 1.0 / (problem.residual_norms(x) + cfg.delta)
        nxt = solve_p1(problem, cfg, weights=w)
        iters += nxt.iterations
        converged = nxt.converged
        change = np.linalg.norm(nxt.x_hat - x) / max(np.linalg.norm(x), 1e-12)
        x = nxt.x_hat
        trace.append(log_surrogate_cost(nxt.residual_norms, cfg.delta))
        if change < cfg.epsilon:
            break
    return SolverOutput(x_hat=x, residual_norms=problem.residual_norms(x),
                        cost_trace=trace, iterations=iters, converged=converged)


def _l1_vertex(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Snap an approximate l1 minimizer to the vertex through its n smallest residuals."""
    n = A.shape[1]
    idx = np.sort(np.argsort(np.abs(b - A @ x), kind="stable")[:n])
    try:
        xv = np.linalg.solve(A[idx], b[idx])
    except np.linalg.LinAlgError:
        return x
    f, fv = np.abs(b - A @ x).sum(), np.abs(b - A @ xv).sum()
    return xv if fv <= f + 1e-9 * (1.0 + f) else x


def solve_l1(problem: SensingProblem, cfg: SolverConfig | None = None) -> SolverOutput:
    """l1-error regression ``min_x ||b - A x||_1``.

    Solved through the dual linear program ``max b^T q`` subject to
    ``A^T q = 0`` and ``|q| <= 1`` with HiGHS; ``x`` is read off the equality
    multipliers and then snapped to the optimal vertex. This is the same
    problem as the sum-of-norms objective on height-one blocks.
    """
    A, b = problem.A, problem.b
    n = problem.n
    orthonormal_range(A)
    res = scipy.optimize.linprog(-b, A_eq=A.T, b_eq=np.zeros(n), bounds=(-1.0, 1.0), method="highs")
    if res.status != 0:
        raise RuntimeError(f"l1 linear program failed: {res.message}")
    # sign convention of HiGHS multipliers: try both, keep the better fit
    x = -res.eqlin.marginals
    if np.abs(b - A @ x).sum() > np.abs(b + A @ x).sum():
        x = -x
    x = _l1_vertex(A, b, x)
    r = b - A @ x
    return SolverOutput(x_hat=x, residual_norms=problem.residual_norms(x),
                        cost_trace=[float(np.abs(r).sum())], iterations=int(res.nit), converged=True)
