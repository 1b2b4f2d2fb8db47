"""Problem, ground-truth, configuration and result containers, plus JSON I/O.

File layout (``schema_version`` 1)::

    {"schema_version": 1, "n": int, "m": int, "k": int,
     "blocks": [{"A": [[...], ...], "b": [...]}, ...],
     "truth": {...} | absent,
     "output": {...} | absent}

Reals use the shortest repr that round-trips (at most 17 significant digits),
so a load/save cycle is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1
OUTLIER_MODELS = ("noise-free-random", "gaussian-outlier", "laplacian-outlier")


class SchemaError(ValueError):
    """Malformed or incompatible problem/result file."""


@dataclass(frozen=True, eq=False)
class SensingProblem:
    """``k`` sensor blocks ``(A_i, b_i)``, each ``A_i`` of shape ``(m, n)``.

    Stored stacked: ``A`` is ``(k*m, n)`` and ``b`` is ``(k*m,)`` with block ``i``
    occupying rows ``i*m:(i+1)*m``.
    """

    A: np.ndarray
    b: np.ndarray
    m: int

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).ravel()
        m = int(self.m)
        if A.ndim != 2:
            raise ValueError("A must be 2-D")
        if m < 1:
            raise ValueError("block height m must be >= 1")
        rows, n = A.shape
        if n < 1:
            raise ValueError("unknown dimension n must be >= 1")
        if rows == 0 or rows % m:
            raise ValueError(f"{rows} rows do not split into blocks of height {m}")
        if b.shape[0] != rows:
            raise ValueError("b length does not match A rows")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("problem data must be finite")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_blocks(cls, blocks: Iterable[tuple]) -> "SensingProblem":
        blocks = [(np.atleast_2d(np.asarray(Ai, float)), np.atleast_1d(np.asarray(bi, float)))
                  for Ai, bi in blocks]
        if not blocks:
            raise ValueError("need at least one sensor block (k >= 1)")
        m = blocks[0][0].shape[0]
        for Ai, bi in blocks:
            if Ai.shape[0] != m or bi.shape != (m,):
                raise ValueError("blocks must share height m; use pad_to_uniform for ragged input")
        return cls(np.vstack([Ai for Ai, _ in blocks]), np.concatenate([bi for _, bi in blocks]), m)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def k(self) -> int:
        return self.A.shape[0] // self.m

    def block(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        sl = slice(i * self.m, (i + 1) * self.m)
        return self.A[sl], self.b[sl]

    @property
    def blocks(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self.block(i) for i in range(self.k)]

    def rows_of(self, indices: Iterable[int]) -> np.ndarray:
        idx = np.asarray(sorted(indices), dtype=int)
        return (idx[:, None] * self.m + np.arange(self.m)).ravel()

    def subproblem(self, indices: Iterable[int]) -> "SensingProblem":
        rows = self.rows_of(indices)
        return SensingProblem(self.A[rows], self.b[rows], self.m)

    def residual_norms(self, x) -> np.ndarray:
        r = self.b - self.A @ np.asarray(x, dtype=float)
        return np.linalg.norm(r.reshape(self.k, self.m), axis=1)

    def scalar_blocks(self) -> "SensingProblem":
        """Same data re-blocked as ``k*m`` sensors of height one."""
        return SensingProblem(self.A, self.b, 1)

    def permuted(self, perm: Sequence[int]) -> "SensingProblem":
        rows = (np.asarray(perm)[:, None] * self.m + np.arange(self.m)).ravel()
        return SensingProblem(self.A[rows], self.b[rows], self.m)

    def __eq__(self, other):
        if not isinstance(other, SensingProblem):
            return NotImplemented
        return (self.m == other.m and self.A.shape == other.A.shape
                and np.array_equal(self.A, other.A) and np.array_equal(self.b, other.b))

    __hash__ = None


@dataclass(frozen=True)
class GroundTruth:
    """Planted solution: ``x0``, reliable sensor indices (0-based), noise level."""

    x0: np.ndarray
    reliable_set: frozenset
    sigma: float = 0.0
    outlier_model: str = "noise-free-random"

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        object.__setattr__(self, "reliable_set", frozenset(int(i) for i in self.reliable_set))
        if not self.reliable_set:
            raise ValueError("reliable set must be non-empty")
        if min(self.reliable_set) < 0:
            raise ValueError("sensor indices must be non-negative")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.outlier_model not in OUTLIER_MODELS:
            raise ValueError(f"unknown outlier model {self.outlier_model!r}")

    @property
    def s(self) -> int:
        return len(self.reliable_set)

    def validate_against(self, problem: SensingProblem) -> None:
        if self.x0.shape != (problem.n,):
            raise ValueError("x0 length does not match n")
        if max(self.reliable_set) >= problem.k:
            raise ValueError("reliable index out of range")

    def labels(self, k: int) -> np.ndarray:
        lab = np.zeros(k, dtype=bool)
        lab[sorted(self.reliable_set)] = True
        return lab


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs shared by the solver family.

    ``lam`` is the outlier penalty (P3/P4 family), ``delta`` the log-surrogate
    offset, ``epsilon`` the relative-change stop threshold, and ``rho``,
    ``abs_tol``, ``rel_tol`` drive the operator-splitting solver.
    """

    lam: float = 1.0
    delta: float = 1e-4
    epsilon: float = 1e-6
    max_iters: int = 5000
    rho: float = 1.0
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        for name in ("delta", "epsilon", "rho", "abs_tol", "rel_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SolverOutput:
    x_hat: np.ndarray
    residual_norms: np.ndarray
    u_hat: np.ndarray | None = None
    cost_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True

    @property
    def outlier_norms(self) -> np.ndarray | None:
        if self.u_hat is None:
            return None
        return np.linalg.norm(self.u_hat, axis=1)


def pad_to_uniform(blocks: Sequence[tuple]) -> SensingProblem:
    """Zero-pad ragged blocks ``(A_i, b_i)`` to the largest block height."""
    if not blocks:
        raise ValueError("need at least one block")
    blocks = [(np.atleast_2d(np.asarray(Ai, float)), np.atleast_1d(np.asarray(bi, float)))
              for Ai, bi in blocks]
    n = blocks[0][0].shape[1]
    if any(Ai.shape[1] != n for Ai, _ in blocks):
        raise ValueError("all blocks must share the unknown dimension n")
    m = max(Ai.shape[0] for Ai, _ in blocks)
    padded = []
    for Ai, bi in blocks:
        if bi.shape[0] != Ai.shape[0]:
            raise ValueError("b_i length must equal A_i rows")
        extra = m - Ai.shape[0]
        padded.append((np.vstack([Ai, np.zeros((extra, n))]), np.concatenate([bi, np.zeros(extra)])))
    return SensingProblem.from_blocks(padded)


# --------------------------------------------------------------------- JSON io

def _num(x: float) -> float:
    # json writes the shortest repr that round-trips, so values survive exactly
    return float(x)


def _vec(v) -> list:
    return [_num(x) for x in np.asarray(v, dtype=float).ravel()]


def _mat(M) -> list:
    return [_vec(row) for row in np.atleast_2d(np.asarray(M, dtype=float))]


def problem_to_dict(problem: SensingProblem, truth: GroundTruth | None = None,
                    output: SolverOutput | None = None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "n": problem.n,
        "m": problem.m,
        "k": problem.k,
        "blocks": [{"A": _mat(Ai), "b": _vec(bi)} for Ai, bi in problem.blocks],
    }
    if truth is not None:
        doc["truth"] = truth_to_dict(truth)
    if output is not None:
        doc["output"] = output_to_dict(output)
    return doc


def truth_to_dict(truth: GroundTruth) -> dict:
    return {
        "x0": _vec(truth.x0),
        "reliable_set": sorted(truth.reliable_set),
        "sigma": _num(truth.sigma),
        "outlier_model": truth.outlier_model,
    }


def output_to_dict(out: SolverOutput) -> dict:
    return {
        "x_hat": _vec(out.x_hat),
        "u_hat": None if out.u_hat is None else _mat(out.u_hat),
        "residual_norms": _vec(out.residual_norms),
        "cost_trace": _vec(out.cost_trace) if len(out.cost_trace) else [],
        "iterations": int(out.iterations),
        "converged": bool(out.converged),
    }


def _require(doc: dict, key: str, kind):
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    val = doc[key]
    if not isinstance(val, kind) or isinstance(val, bool) and kind is not bool:
        raise SchemaError(f"field {key!r} has wrong type {type(val).__name__}")
    return val


def problem_from_dict(doc: dict) -> tuple[SensingProblem, GroundTruth | None, SolverOutput | None]:
    if not isinstance(doc, dict):
        raise SchemaError("top-level JSON value must be an object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaError(f"schema version {version} is not supported (expected {SCHEMA_VERSION})")
    n = _require(doc, "n", int)
    m = _require(doc, "m", int)
    k = _require(doc, "k", int)
    if k < 1 or n < 1 or m < 1:
        raise SchemaError(f"dimensions must be positive, got n={n}, m={m}, k={k}")
    blocks = _require(doc, "blocks", list)
    if len(blocks) != k:
        raise SchemaError(f"k={k} but {len(blocks)} blocks present")
    pairs = []
    for i, blk in enumerate(blocks):
        try:
            Ai = np.array(blk["A"], dtype=float)
            bi = np.array(blk["b"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"block {i}: {exc}") from None
        if Ai.shape != (m, n) or bi.shape != (m,):
            raise SchemaError(f"block {i}: expected A {m}x{n} and b of length {m}")
        pairs.append((Ai, bi))
    try:
        problem = SensingProblem.from_blocks(pairs)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None

    truth = None
    if doc.get("truth") is not None:
        t = doc["truth"]
        try:
            truth = GroundTruth(np.array(t["x0"], float), t["reliable_set"],
                                float(t.get("sigma", 0.0)), t.get("outlier_model", "noise-free-random"))
            truth.validate_against(problem)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"truth: {exc}") from None

    output = None
    if doc.get("output") is not None:
        o = doc["output"]
        try:
            output = SolverOutput(
                x_hat=np.array(o["x_hat"], float),
                residual_norms=np.array(o["residual_norms"], float),
                u_hat=None if o.get("u_hat") is None else np.array(o["u_hat"], float),
                cost_trace=list(map(float, o.get("cost_trace", []))),
                iterations=int(o.get("iterations", 0)),
                converged=bool(o.get("converged", True)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"output: {exc}") from None
    return problem, truth, output


def dumps(problem: SensingProblem, truth: GroundTruth | None = None,
          output: SolverOutput | None = None) -> str:
    return json.dumps(problem_to_dict(problem, truth, output), indent=1) + "\n"


def loads(text: str):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON at byte offset {exc.pos}: {exc.msg}") from None
    return problem_from_dict(doc)


def save(path, problem: SensingProblem, truth: GroundTruth | None = None,
         output: SolverOutput | None = None) -> None:
    Path(path).write_text(dumps(problem, truth, output))


def load(path):
    """Read a problem file; returns ``(problem, truth_or_None, output_or_None)``."""
    return loads(Path(path).read_text())

