"""Exhaustive oracles, identifiability checks, recovery-bound constants and
problem reductions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .linalg import RankDeficientError, RngStream, least_squares, numerical_rank, orthonormal_range
from .model import SensingProblem

P0_MAX_K = 20
MAX_SUBSETS = 10**6


class P0Result(NamedTuple):
    x: np.ndarray
    support: tuple
    s: int


class RSNResult(NamedTuple):
    x: np.ndarray
    support: tuple
    objective: float
    rank_deficient: int     # subsets solved by the min-norm fallback


class RangeCounterexample(NamedTuple):
    v: np.ndarray           # stacked vector in range(A)
    u: np.ndarray           # v = A u
    support: tuple          # the s blocks with smallest norms
    lhs: float              # sum over ``support``
    rhs: float              # sum over the rest


@dataclass(frozen=True)
class RecoveryBound:
    """Constants of the probabilistic sum-of-norms recovery bound.

    ``c0`` is evaluated from its formula regardless; ``applicable`` is False
    when ``beta <= beta_star``, in which case ``min_m`` is None.
    """

    beta: float
    gamma: float
    alpha: float
    beta_star: float
    c0: float
    min_m: int | None
    applicable: bool


def _check_count(k: int, r: int) -> None:
    count = math.comb(k, r)
    if count > MAX_SUBSETS:
        raise ValueError(f"C({k},{r}) = {count} subsets exceeds the limit of {MAX_SUBSETS}")


def solve_p0_bruteforce(problem: SensingProblem, feas_tol: float = 1e-8) -> P0Result:
    """Largest set of sensors with a common exact solution, by enumeration.

    Tries subset sizes from ``k`` down to 1 and, within a size, subsets in
    lexicographic order. A subset ``S`` is feasible when the least-squares
    residual of the stacked ``(A_S, b_S)`` is at most
    ``feas_tol * (1 + ||b_S||)``. The first feasible subset wins; ``x`` is the
    minimum-norm least-squares solution on it.
    """
    k = problem.k
    if k > P0_MAX_K:
        raise ValueError(f"brute force limited to k <= {P0_MAX_K}, got k={k}")
    A, b = problem.A, problem.b
    for s in range(k, 0, -1):
        for S in combinations(range(k), s):
            rows = problem.rows_of(S)
            AS, bS = A[rows], b[rows]
            x = least_squares(AS, bS)
            if np.linalg.norm(bS - AS @ x) <= feas_tol * (1.0 + np.linalg.norm(bS)):
                return P0Result(x, S, s)
    raise ValueError("no single sensor is consistent")


def solve_rsn_bruteforce(problem: SensingProblem, s: int) -> RSNResult:
    """Best ``s`` sensors in the least-squares sense, by enumeration.

    Minimizes ``||b_S - A_S x||^2`` over all ``|S| = s`` and ``x``. Subsets with
    rank-deficient ``A_S`` fall back to the minimum-norm solution and are
    counted in ``rank_deficient``. Ties keep the lexicographically first subset.
    """
    k = problem.k
    if not 1 <= s <= k:
        raise ValueError(f"need 1 <= s <= k, got s={s}, k={k}")
    _check_count(k, s)
    A, b, n = problem.A, problem.b, problem.n
    best = None
    deficient = 0
    for S in combinations(range(k), s):
        rows = problem.rows_of(S)
        AS, bS = A[rows], b[rows]
        if numerical_rank(AS) < n:
            deficient += 1
        x = least_squares(AS, bS)
        r = bS - AS @ x
        obj = float(r @ r)
        if best is None or obj < best[2]:
            best = (x, S, obj)
    return RSNResult(best[0], best[1], best[2], deficient)


def check_uniqueness_rank(problem: SensingProblem, s: int) -> tuple | None:
    """Rank test for uniqueness of the robust-sensing minimizer with ``s`` reliable sensors.

    Returns ``None`` when every stacked ``A_Sc`` with ``|Sc| = 2s - k`` has
    rank ``n``, otherwise the first rank-deficient subset (lexicographic).
    """
    k, m, n = problem.k, problem.m, problem.n
    if not (2 * s > k and s <= k):
        raise ValueError(f"need k/2 < s <= k, got s={s}, k={k}")
    size = 2 * s - k
    if size * m < n:
        return tuple(range(size))
    _check_count(k, size)
    for S in combinations(range(k), size):
        if numerical_rank(problem.A[problem.rows_of(S)]) < n:
            return S
    return None


def _range_violation(problem: SensingProblem, u: np.ndarray, s: int) -> RangeCounterexample | None:
    v = problem.A @ u
    norms = np.linalg.norm(v.reshape(problem.k, problem.m), axis=1)
    if not norms.any():
        return None
    order = np.argsort(norms, kind="stable")
    lhs = float(norms[order[:s]].sum())
    rhs = float(norms[order[s:]].sum())
    if lhs <= rhs:
        return RangeCounterexample(v, u, tuple(sorted(int(i) for i in order[:s])), lhs, rhs)
    return None


def falsify_range_condition(problem: SensingProblem, s: int, trials: int = 1000,
                            rng: RngStream | np.random.Generator | None = None
                            ) -> RangeCounterexample | None:
    """Random search for a violation of the range-space recovery condition.

    The condition asks that, for every nonzero ``v = A u``, the ``s`` smallest
    block norms sum to strictly more than the other ``k - s``. Half of the
    trials draw ``u`` uniformly on the sphere; the other half draw ``u`` from
    the null space of a random subset of blocks, which forces some ``v_i = 0``
    and is where violations tend to live. A returned counterexample is a
    certificate; ``None`` certifies nothing.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 1 <= s <= problem.k:
        raise ValueError(f"need 1 <= s <= k, got s={s}")
    gen = RngStream(0).generator() if rng is None else (
        rng.generator() if isinstance(rng, RngStream) else rng)
    k, m, n = problem.k, problem.m, problem.n
    max_null = min(s, (n - 1) // m)   # subsets with a nontrivial null space
    for t in range(trials):
        if t % 2 == 1 and max_null >= 1:
            size = int(gen.integers(1, max_null + 1))
            T = np.sort(gen.choice(k, size=size, replace=False))
            AT = problem.A[problem.rows_of(T)]
            _, sv, Vt = np.linalg.svd(AT)
            rank = int(np.sum(sv > 1e-10 * sv[0])) if sv.size else 0
            N = Vt[rank:].T
            u = N @ gen.standard_normal(N.shape[1])
        else:
            u = gen.standard_normal(n)
        nu = np.linalg.norm(u)
        if nu == 0:
            continue
        hit = _range_violation(problem, u / nu, s)
        if hit is not None:
            return hit
    return None


def recovery_bound_constants(n: int, m: int, k: int, s: int, alpha: float) -> RecoveryBound:
    """Evaluate ``beta``, ``gamma``, ``beta_star``, ``c0`` and the minimum block height.

    ``c0 = 0.5 * ((2 beta - 1) / sqrt(gamma) - 1)**2`` and
    ``min_m = ceil(beta log(e / beta) / ((1 - alpha) c0 gamma))``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if min(n, m, k, s) < 1 or s > k:
        raise ValueError("need positive n, m, k and 1 <= s <= k")
    beta = s / k
    gamma = n / (k * m)
    beta_star = (math.sqrt(gamma) + 1.0) / 2.0
    c0 = 0.5 * ((2.0 * beta - 1.0) / math.sqrt(gamma) - 1.0) ** 2
    applicable = beta > beta_star and c0 > 0
    min_m = None
    if applicable:
        min_m = math.ceil(beta * math.log(math.e / beta) / ((1.0 - alpha) * c0 * gamma))
    return RecoveryBound(beta, gamma, alpha, beta_star, c0, min_m, applicable)


def mcle_to_rs(C, d, m: int = 2) -> SensingProblem:
    """Embed ``C x = d`` (one equation per sensor) as blocks of height ``m``.

    Block ``i`` has ``(C_i, d_i)`` in its first row and zeros below, so a
    sensor is consistent exactly when its equation is satisfied.
    """
    if m < 2:
        raise ValueError("block height m must be >= 2")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.asarray(d, dtype=float).ravel()
    k, n = C.shape
    if d.shape != (k,):
        raise ValueError("d must have one entry per row of C")
    A = np.zeros((k * m, n))
    b = np.zeros(k * m)
    A[::m] = C
    b[::m] = d
    return SensingProblem(A, b, m)


def annihilator_pair(A, b) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal ``C`` with ``C A = 0`` spanning the complement of ``range(A)``, and ``d = C b``."""
    A = np.asarray(A.A if isinstance(A, SensingProblem) else A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    rows, n = A.shape
    if rows <= n:
        raise ValueError(f"need more rows than columns, got {rows}x{n}")
    orthonormal_range(A)  # full column rank check
    Qf, _ = np.linalg.qr(A, mode="complete")
    C = Qf[:, n:].T
    return C, C @ b


def recover_from_residual(A, b, r0) -> np.ndarray:
    """``x = A^+ (b - r0)``: map a residual back to the unknown."""
    A = np.asarray(A, dtype=float)
    return least_squares(A, np.asarray(b, float) - np.asarray(r0, float))


__all__ = [
    "P0Result", "RSNResult", "RangeCounterexample", "RecoveryBound", "RankDeficientError",
    "annihilator_pair", "check_uniqueness_rank", "falsify_range_condition", "mcle_to_rs",
    "recover_from_residual", "recovery_bound_constants", "solve_p0_bruteforce",
    "solve_rsn_bruteforce",
]
