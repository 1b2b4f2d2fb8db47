"""Robust sensing in noise: block-sparse outlier model solved by block
coordinate descent, its reweighted log variant, scalar Huber, and the
prewhitened versions for colored noise."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from ..linalg import orthonormal_range
from ..model import SensingProblem, SolverConfig, SolverOutput
from .prox import block_soft_threshold_rows

HUBER_TAU = 1.34


def lambda_rule_of_thumb(sigma: float, m: int, tau: float = HUBER_TAU) -> float:
    """Penalty ``tau * sigma * sqrt(m)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return tau * sigma * np.sqrt(m)


def p3_objective(problem: SensingProblem, x, u, lam) -> float:
    """``0.5||b - A x - u||^2 + sum_i lam_i ||u_i||``; ``lam`` scalar or per block."""
    u = np.asarray(u, dtype=float).reshape(problem.k, problem.m)
    r = problem.b - problem.A @ x - u.ravel()
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (problem.k,))
    return float(0.5 * r @ r + np.dot(lam, np.linalg.norm(u, axis=1)))


def p4_objective(problem: SensingProblem, x, u, lam: float, delta: float) -> float:
    """``0.5||b - A x - u||^2 + lam * sum_i log(||u_i|| + delta)``."""
    u = np.asarray(u, dtype=float).reshape(problem.k, problem.m)
    r = problem.b - problem.A @ x - u.ravel()
    return float(0.5 * r @ r + lam * np.sum(np.log(np.linalg.norm(u, axis=1) + delta)))


def _bcd(problem: SensingProblem, lam_blocks: np.ndarray, cfg: SolverConfig,
         Q: np.ndarray, R: np.ndarray, u0: np.ndarray | None = None):
    """Alternate the exact x-step and the closed-form u-step.

    Works on residuals only: ``r = P_perp b + P_A u`` with ``P_A u`` applied
    as ``Q (Q^T u)`` so each sweep costs O(kmn).
    """
    k, m, b = problem.k, problem.m, problem.b
    Qtb = Q.T @ b
    perp_b = b - Q @ Qtb
    u = np.zeros((k, m)) if u0 is None else np.array(u0, dtype=float).reshape(k, m)
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        flat = u.ravel()
        r = perp_b + Q @ (Q.T @ flat)
        u_new = block_soft_threshold_rows(r.reshape(k, m), lam_blocks)
        d = r - u_new.ravel()
        trace.append(float(0.5 * d @ d + np.dot(lam_blocks, np.linalg.norm(u_new, axis=1))))
        nrm_new = np.linalg.norm(u_new)
        if nrm_new == 0.0 and not flat.any():
            u = u_new
            converged = True
            break
        change = np.linalg.norm(u_new - u) / max(nrm_new, 1e-12)
        u = u_new
        if change < cfg.epsilon:
            converged = True
            break
    x = scipy.linalg.solve_triangular(R, Qtb - Q.T @ u.ravel())
    return x, u, trace, it, converged


def _output(problem, x, u, trace, iters, converged) -> SolverOutput:
    return SolverOutput(x_hat=x, u_hat=u, residual_norms=problem.residual_norms(x),
                        cost_trace=trace, iterations=iters, converged=converged)


def solve_p3(problem: SensingProblem, cfg: SolverConfig | None = None,
             u_init=None, lam_blocks=None) -> SolverOutput:
    """Minimize ``0.5||b - A x - u||^2 + lam sum_i ||u_i||`` over ``(x, u)``.

    Block coordinate descent from ``u = 0`` (so the first x-step is plain LS),
    stopping once ``||u_l - u_{l-1}|| / ||u_l|| < epsilon`` or when ``u`` stays
    identically zero. ``lam_blocks`` overrides ``cfg.lam`` with per-sensor
    penalties (used by the reweighted variant).
    """
    cfg = cfg or SolverConfig()
    if lam_blocks is None:
        if not cfg.lam > 0:
            raise ValueError("lam must be positive")
        lam_blocks = np.full(problem.k, cfg.lam)
    Q = orthonormal_range(problem.A)
    R = Q.T @ problem.A
    return _output(problem, *_bcd(problem, np.asarray(lam_blocks, float), cfg, Q, R, u_init))


def solve_p3_path(problem: SensingProblem, lambda_grid, cfg: SolverConfig | None = None
                  ) -> list[SolverOutput]:
    """Solve over a descending grid of penalties, warm-starting ``u`` each time."""
    cfg = cfg or SolverConfig()
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0):
        raise ValueError("lambda grid must be a non-empty list of positive values")
    if np.any(np.diff(grid) > 0):
        raise ValueError("lambda grid must be descending")
    Q = orthonormal_range(problem.A)
    R = Q.T @ problem.A
    outs, u = [], None
    for lam in grid:
        res = _bcd(problem, np.full(problem.k, lam), cfg, Q, R, u)
        u = res[1]
        outs.append(_output(problem, *res))
    return outs


def solve_p4(problem: SensingProblem, cfg: SolverConfig | None = None,
             outer_iters: int = 1, start: SolverOutput | None = None) -> SolverOutput:
    """Reweighted outlier penalty for the log surrogate.

    Starts from the unweighted solution (all weights one). Each outer pass
    solves with per-sensor penalties ``lam / (||u_i|| + delta)`` evaluated at
    the previous ``u``, warm-started there. Stops after ``outer_iters`` passes
    or when the relative change in ``u`` is below ``epsilon``. ``cost_trace``
    records the log-penalty objective after each pass, starting point first.
    ``start`` may pass in an already computed unweighted solution.
    """
    cfg = cfg or SolverConfig()
    if outer_iters < 0:
        raise ValueError("outer_iters must be >= 0")
    Q = orthonormal_range(problem.A)
    R = Q.T @ problem.A
    lam = cfg.lam
    if start is None:
        x, u, trace, iters, converged = _bcd(problem, np.full(problem.k, lam), cfg, Q, R)
    else:
        x, u, trace = start.x_hat, start.u_hat, list(start.cost_trace)
        iters, converged = start.iterations, start.converged
    if outer_iters == 0:
        return _output(problem, x, u, trace, iters, converged)
    log_trace = [p4_objective(problem, x, u, lam, cfg.delta)]
    for _ in range(outer_iters):
        lam_i = lam / (np.linalg.norm(u, axis=1) + cfg.delta)
        x, u_new, _, it, converged = _bcd(problem, lam_i, cfg, Q, R, u)
        iters += it
        log_trace.append(p4_objective(problem, x, u_new, lam, cfg.delta))
        change = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-12)
        u = u_new
        if change < cfg.epsilon:
            break
    return _output(problem, x, u, log_trace, iters, converged)


def solve_huber_scalar(problem: SensingProblem, tau: float,
                       cfg: SolverConfig | None = None) -> SolverOutput:
    """Huber's M-estimator with cutoff ``tau``, via the outlier model on
    height-one blocks. ``u_hat`` is reshaped back to ``(k, m)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    cfg = cfg or SolverConfig()
    scalar = problem.scalar_blocks()
    out = solve_p3(scalar, cfg, lam_blocks=np.full(scalar.k, float(tau)))
    out.u_hat = out.u_hat.reshape(problem.k, problem.m)
    out.residual_norms = problem.residual_norms(out.x_hat)
    return out


# ------------------------------------------------------------------ colored

def _inv_sqrt(Sigma: np.ndarray) -> np.ndarray:
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise ValueError("Sigma must be square")
    if not np.allclose(Sigma, Sigma.T, rtol=0, atol=1e-12 * np.abs(Sigma).max()):
        raise ValueError("Sigma must be symmetric")
    evals, evecs = np.linalg.eigh(Sigma)
    if evals.min() <= 0 or evals.min() <= 1e-12 * evals.max():
        raise ValueError("Sigma must be positive definite")
    W = (evecs / np.sqrt(evals)) @ evecs.T
    return 0.5 * (W + W.T)


def colored_objective(problem: SensingProblem, W: np.ndarray, x, u, lam) -> float:
    """``0.5||W (b - A x - u)||^2 + sum_i lam_i ||u_i||``."""
    u = np.asarray(u, dtype=float).reshape(problem.k, problem.m)
    r = W @ (problem.b - problem.A @ x - u.ravel())
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (problem.k,))
    return float(0.5 * r @ r + np.dot(lam, np.linalg.norm(u, axis=1)))


def _colored_solve(problem, W, lam_blocks, cfg, u0=None):
    """Minimize the prewhitened objective with ``x`` eliminated.

    For fixed ``u`` the best ``x`` is least squares on the whitened data, so
    the problem reduces to ``0.5||c - M u||^2 + sum_i lam_i ||u_i||`` with
    ``M = P_perp W`` and ``c = P_perp W b`` (``P_perp`` projects off the range
    of ``W A``). That is solved by monotone FISTA with adaptive restart.
    """
    k, m = problem.k, problem.m
    Aw = W @ problem.A
    bw = W @ problem.b
    Q = orthonormal_range(Aw)
    R = Q.T @ Aw
    M = W - Q @ (Q.T @ W)
    c = bw - Q @ (Q.T @ bw)
    step = 1.0 / max(np.linalg.norm(M, 2) ** 2, 1e-300)
    lam_step = step * lam_blocks

    def cost(v):
        e = c - M @ v.ravel()
        return float(0.5 * e @ e + np.dot(lam_blocks, np.linalg.norm(v, axis=1)))

    u = np.zeros((k, m)) if u0 is None else np.array(u0, dtype=float).reshape(k, m)
    f_u = cost(u)
    z, t = u.copy(), 1.0
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters * 10 + 1):
        grad = -(M.T @ (c - M @ z.ravel()))
        v = block_soft_threshold_rows(z - step * grad.reshape(k, m), lam_step)
        f_v = cost(v)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        accepted = f_v <= f_u
        if accepted:
            z = v + ((t - 1.0) / t_new) * (v - u)
            change = np.linalg.norm(v - u) / max(np.linalg.norm(v), 1e-12)
            u, f_u, t = v, f_v, t_new
        else:
            if t == 1.0:
                # a plain prox step from u failed to descend: stationary to rounding
                converged = True
                break
            # reject and restart momentum; the next step is a plain prox step
            z, t = u.copy(), 1.0
        trace.append(f_u)
        if accepted and (change < cfg.epsilon * 1e-2 or not u.any() and not z.any()):
            converged = True
            break
    x = scipy.linalg.solve_triangular(R, Q.T @ (bw - W @ u.ravel()))
    return x, u, trace, it, converged


def solve_p3_colored(problem: SensingProblem, Sigma, cfg: SolverConfig | None = None,
                     u_init=None, lam_blocks=None) -> SolverOutput:
    """Outlier-penalized regression under noise covariance ``Sigma``.

    Minimizes ``0.5||S(b - A x - u)||^2 + lam sum_i ||u_i||`` with
    ``S = Sigma^{-1/2}``. The x-step is least squares on the whitened data;
    eliminating it leaves a group-lasso problem in ``u`` that is solved by
    monotone accelerated proximal gradient with step ``1 / ||P_perp W||^2``.

    With ``Sigma = s**2 I`` this equals the white-noise problem with penalty
    ``lam * s**2``.
    """
    cfg = cfg or SolverConfig()
    W = _inv_sqrt(Sigma)
    if W.shape[0] != problem.A.shape[0]:
        raise ValueError(f"Sigma must be {problem.A.shape[0]}x{problem.A.shape[0]}")
    if lam_blocks is None:
        if not cfg.lam > 0:
            raise ValueError("lam must be positive")
        lam_blocks = np.full(problem.k, cfg.lam)
    return _output(problem, *_colored_solve(problem, W, np.asarray(lam_blocks, float), cfg, u_init))


def solve_p4_colored(problem: SensingProblem, Sigma, cfg: SolverConfig | None = None,
                     outer_iters: int = 1, start: SolverOutput | None = None) -> SolverOutput:
    """Reweighted (log-penalty) counterpart of :func:`solve_p3_colored`."""
    cfg = cfg or SolverConfig()
    if outer_iters < 0:
        raise ValueError("outer_iters must be >= 0")
    W = _inv_sqrt(Sigma)
    if W.shape[0] != problem.A.shape[0]:
        raise ValueError(f"Sigma must be {problem.A.shape[0]}x{problem.A.shape[0]}")
    lam = cfg.lam
    if start is None:
        x, u, trace, iters, converged = _colored_solve(problem, W, np.full(problem.k, lam), cfg)
    else:
        x, u, trace = start.x_hat, start.u_hat, list(start.cost_trace)
        iters, converged = start.iterations, start.converged
    if outer_iters == 0:
        return _output(problem, x, u, trace, iters, converged)
    for _ in range(outer_iters):
        lam_i = lam / (np.linalg.norm(u, axis=1) + cfg.delta)
        x, u_new, _, it, converged = _colored_solve(problem, W, lam_i, cfg, u)
        iters += it
        change = np.linalg.norm(u_new - u) / max(np.linalg.norm(u_new), 1e-12)
        u = u_new
        if change < cfg.epsilon:
            break
    return _output(problem, x, u, trace, iters, converged)
