"""Synthetic instance generators, sensor classification, and the Monte Carlo
experiment families (phase diagram, noise-free table, MSE curves, noisy table).

Trial ``t`` of every experiment draws its data from ``RngStream(seed, t)``, so
cells of one experiment share random numbers and results do not depend on how
trials are scheduled across processes. Aggregates are exactly rounded sums
(``math.fsum``), hence independent of summation order too.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .linalg import RngStream, sample, toeplitz_sqrt_pair
from .model import GroundTruth, SensingProblem, SolverConfig, SolverOutput
from .solvers import (HUBER_TAU, solve_genie_ls, solve_huber_scalar, solve_l1, solve_ls,
                      solve_p1, solve_p2, solve_p3, solve_p3_colored, solve_p4,
                      solve_p4_colored)

FAMILIES = ("phase-diagram", "rs-table", "rsn-mse", "rsn-table", "colored")
RS_METHODS = ("GA-LS", "LS", "L1", "P1", "P2(1)")
RSN_METHODS = ("LS", "GA-LS", "L1", "Huber", "P1", "P2(1)", "P3", "P4(1)")
COLORED_METHODS = RSN_METHODS + ("P3-colored", "P4(1)-colored")
SUCCESS_TOL = 1e-4

PHASE_HEADER = ("gamma", "beta", "n", "m", "k", "s", "trials", "success_rate")
TABLE_HEADER = ("method", "s", "per_sensor_pct", "whole_network_pct")
MSE_HEADER = ("method", "s", "mse", "trials")


def snr_to_sigma(snr_db: float) -> float:
    """Noise level for unit signal power per measurement."""
    return 10.0 ** (-snr_db / 20.0)


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be an RngStream or numpy Generator")


def _check_dims(n, m, k, s):
    if min(n, m, k) < 1:
        raise ValueError(f"dimensions must be positive, got n={n}, m={m}, k={k}")
    if not 1 <= s <= k:
        raise ValueError(f"need 1 <= s <= k, got s={s}, k={k}")


def generate_rs_instance(n: int, m: int, k: int, s: int, rng) -> tuple[SensingProblem, GroundTruth]:
    """Noise-free instance: sensors ``0..s-1`` are consistent with ``x0``.

    ``A`` has i.i.d. standard normal entries, ``x0 ~ N(0, I/n)`` and the
    remaining ``k - s`` sensors observe i.i.d. standard normal values, which
    matches the per-entry variance of the consistent ones.
    """
    _check_dims(n, m, k, s)
    gen = _generator(rng)
    A = gen.standard_normal((k * m, n))
    x0 = gen.standard_normal(n) / np.sqrt(n)
    b = A @ x0
    b[s * m:] = gen.standard_normal((k - s) * m)
    truth = GroundTruth(x0, range(s), 0.0, "noise-free-random")
    return SensingProblem(A, b, m), truth


def generate_rsn_instance(n: int, m: int, k: int, s: int, sigma: float,
                          outlier_model: str = "gaussian-outlier", Sigma=None,
                          rng=None) -> tuple[SensingProblem, GroundTruth]:
    """Noisy instance with ``x0 = 1/sqrt(n)`` and sensors ``0..s-1`` reliable.

    Reliable sensors see ``A_i x0`` plus noise. With ``gaussian-outlier`` the
    others see standard normal values plus the same noise; with
    ``laplacian-outlier`` they see i.i.d. Laplacian entries of variance
    ``sigma**2 + 1`` and nothing else. Noise is white with level ``sigma``
    unless a full covariance ``Sigma`` (``km x km``) is given.
    """
    _check_dims(n, m, k, s)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if outlier_model not in ("gaussian-outlier", "laplacian-outlier"):
        raise ValueError(f"unknown outlier model {outlier_model!r}")
    gen = _generator(rng if rng is not None else RngStream(0))
    rows = k * m
    chol = None
    if Sigma is not None:
        Sigma = np.asarray(Sigma, dtype=float)
        if Sigma.shape != (rows, rows):
            raise ValueError(f"Sigma must be {rows}x{rows}, got {Sigma.shape}")
        if not np.allclose(Sigma, Sigma.T):
            raise ValueError("Sigma must be symmetric")
        try:
            chol = np.linalg.cholesky(Sigma)
        except np.linalg.LinAlgError:
            raise ValueError("Sigma must be positive definite") from None

    A = gen.standard_normal((rows, n))
    x0 = np.full(n, 1.0 / np.sqrt(n))
    z = gen.standard_normal(rows)
    noise = chol @ z if chol is not None else sigma * z
    b = A @ x0 + noise
    bad = slice(s * m, rows)
    if outlier_model == "gaussian-outlier":
        b[bad] = gen.standard_normal((k - s) * m) + noise[bad]
    else:
        b[bad] = sample("laplacian", (k - s) * m, gen, sigma=np.sqrt(sigma ** 2 + 1.0))
    truth = GroundTruth(x0, range(s), float(sigma), outlier_model)
    return SensingProblem(A, b, m), truth


# ------------------------------------------------------------- classification

@dataclass(frozen=True)
class ClassificationReport:
    per_sensor_correct: float
    whole_network_success: bool
    labels: np.ndarray          # True = classified reliable


def classify(output: SolverOutput, truth: GroundTruth, rule: str = "residual",
             threshold: float = SUCCESS_TOL, problem: SensingProblem | None = None,
             norm: str = "inf") -> ClassificationReport:
    """Label each sensor reliable or not and score against the truth.

    ``rule="residual"``: reliable iff the block residual norm is at most
    ``threshold``. ``norm="inf"`` uses the max-abs residual and needs
    ``problem``; ``norm="l2"`` uses ``output.residual_norms``.
    ``rule="u-support"``: reliable iff the estimated outlier block is exactly
    zero (for scalar Huber every entry of the block must be zero).
    """
    if rule == "residual":
        if norm == "inf":
            if problem is None:
                raise ValueError("the max-abs residual rule needs the problem")
            res = (problem.b - problem.A @ output.x_hat).reshape(problem.k, problem.m)
            score = np.max(np.abs(res), axis=1)
        elif norm == "l2":
            score = np.asarray(output.residual_norms)
        else:
            raise ValueError(f"unknown norm {norm!r}")
        labels = score <= threshold
    elif rule == "u-support":
        if output.u_hat is None:
            raise ValueError("u-support rule needs an estimated outlier vector")
        labels = ~np.asarray(output.u_hat).reshape(len(output.residual_norms), -1).any(axis=1)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    correct = labels == truth.labels(labels.size)
    return ClassificationReport(float(correct.mean()), bool(correct.all()), labels)


# ------------------------------------------------------------------ the specs

@dataclass(frozen=True)
class ExperimentSpec:
    """Everything an experiment depends on besides code.

    ``tau_factor`` sets the Huber cutoff ``tau = tau_factor * sigma`` and the
    outlier penalty ``lam = tau * sqrt(m)``; ``nm_pairs`` and ``n_gammas``
    are used by the phase diagram only.
    """

    family: str
    n: int = 20
    m: int = 4
    k: int = 16
    s_values: tuple = ()
    trials: int = 100
    seed: int = 0
    snr_db: float | None = None
    methods: tuple = ()
    nm_pairs: tuple = ()
    n_gammas: int = 10
    outer_iters: int = 1
    delta: float = 1e-4
    tau_factor: float = HUBER_TAU
    toeplitz_rho: float = 0.9

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if min(self.n, self.m, self.k) < 1:
            raise ValueError("dimensions must be positive")
        if any(not 1 <= s <= self.k for s in self.s_values):
            raise ValueError("every s must satisfy 1 <= s <= k")
        allowed = {"rs-table": RS_METHODS, "rsn-table": RSN_METHODS,
                   "rsn-mse": RSN_METHODS, "colored": COLORED_METHODS}.get(self.family, ())
        bad = [mth for mth in self.methods if mth not in allowed]
        if bad:
            raise ValueError(f"methods {bad} not available for {self.family}")
        if self.family != "phase-diagram" and self.family != "rs-table" and self.snr_db is None:
            raise ValueError(f"{self.family} needs snr_db")
        object.__setattr__(self, "s_values", tuple(int(s) for s in self.s_values))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "nm_pairs", tuple(tuple(p) for p in self.nm_pairs))

    @property
    def sigma(self) -> float:
        return snr_to_sigma(self.snr_db)

    @classmethod
    def default(cls, family: str, seed: int, **overrides) -> "ExperimentSpec":
        """Stock settings for each family; keyword overrides win."""
        base = {
            "phase-diagram": dict(trials=50, nm_pairs=((40, 20), (20, 10))),
            "rs-table": dict(n=20, m=4, k=16, s_values=(8, 10, 12, 14, 16), trials=1000,
                             methods=RS_METHODS),
            "rsn-table": dict(n=80, m=8, k=32, s_values=(16, 20, 24, 28, 32), trials=500,
                              snr_db=5.0, tau_factor=1.0, methods=RSN_METHODS),
            "rsn-mse": dict(n=20, m=4, k=16, s_values=tuple(range(8, 17)), trials=1000,
                            snr_db=10.0, methods=RSN_METHODS),
            "colored": dict(n=20, m=4, k=16, s_values=tuple(range(8, 17)), trials=1000,
                            snr_db=10.0, methods=COLORED_METHODS),
        }[family]
        base.update(overrides)
        return cls(family=family, seed=seed, **base)


# ---------------------------------------------------------------- trial level

def _init_worker():
    threadpool_limits(1)


def _map_trials(fn: Callable, jobs: Sequence, threads: int) -> list:
    """Evaluate ``fn(job)`` for every job, returning results in job order."""
    with threadpool_limits(1):
        if threads <= 1 or len(jobs) < 2:
            return [fn(job) for job in jobs]
        chunk = max(1, len(jobs) // (8 * threads))
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker) as pool:
            return list(pool.map(fn, jobs, chunksize=chunk))


def resolve_threads(threads: int | None) -> int:
    """Explicit value, else ``ROBUST_SENSING_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get("ROBUST_SENSING_THREADS", "1") or 1)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def _phase_trial(job):
    n, m, k, s, seed, t = job
    problem, truth = generate_rs_instance(n, m, k, s, RngStream(seed, t))
    out = solve_p1(problem)
    return bool(np.max(np.abs(out.x_hat - truth.x0)) <= SUCCESS_TOL)


def _rs_trial(job):
    spec, s, t = job
    problem, truth = generate_rs_instance(spec.n, spec.m, spec.k, s, RngStream(spec.seed, t))
    cfg = SolverConfig(delta=spec.delta)
    outs = {}
    want = set(spec.methods)
    if "GA-LS" in want:
        outs["GA-LS"] = solve_genie_ls(problem, truth.reliable_set)
    if "LS" in want:
        outs["LS"] = solve_ls(problem)
    if "L1" in want:
        outs["L1"] = solve_l1(problem, cfg)
    if want & {"P1", "P2(1)"}:
        p1 = solve_p1(problem, cfg)
        outs["P1"] = p1
        if "P2(1)" in want:
            outs["P2(1)"] = solve_p2(problem, cfg, spec.outer_iters, start=p1)
    res = {}
    for name in spec.methods:
        rep = classify(outs[name], truth, "residual", SUCCESS_TOL, problem=problem, norm="inf")
        res[name] = (rep.per_sensor_correct, rep.whole_network_success)
    return res


def _rsn_solve(spec: ExperimentSpec, problem, truth, Sigma=None) -> dict:
    sigma = spec.sigma
    tau = spec.tau_factor * sigma
    lam = tau * np.sqrt(spec.m)
    cfg = SolverConfig(lam=lam, delta=spec.delta)
    want = set(spec.methods)
    outs = {}
    if "LS" in want:
        outs["LS"] = solve_ls(problem)
    if "GA-LS" in want:
        outs["GA-LS"] = solve_genie_ls(problem, truth.reliable_set)
    if "L1" in want:
        outs["L1"] = solve_l1(problem, cfg)
    if "Huber" in want:
        outs["Huber"] = solve_huber_scalar(problem, tau, cfg)
    if want & {"P1", "P2(1)"}:
        p1 = solve_p1(problem, cfg)
        outs["P1"] = p1
        if "P2(1)" in want:
            outs["P2(1)"] = solve_p2(problem, cfg, spec.outer_iters, start=p1)
    if want & {"P3", "P4(1)"}:
        p3 = solve_p3(problem, cfg)
        outs["P3"] = p3
        if "P4(1)" in want:
            outs["P4(1)"] = solve_p4(problem, cfg, spec.outer_iters, start=p3)
    if want & {"P3-colored", "P4(1)-colored"}:
        # the white-noise penalty expressed in whitened units
        ccfg = replace(cfg, lam=lam / sigma ** 2)
        p3c = solve_p3_colored(problem, Sigma, ccfg)
        outs["P3-colored"] = p3c
        if "P4(1)-colored" in want:
            outs["P4(1)-colored"] = solve_p4_colored(problem, Sigma, ccfg, spec.outer_iters, start=p3c)
    return outs


def _colored_cov(spec: ExperimentSpec) -> np.ndarray:
    T, _ = toeplitz_sqrt_pair(spec.toeplitz_rho ** np.arange(spec.k * spec.m))
    return spec.sigma ** 2 * T


def _mse_trial(job):
    spec, s, t = job
    Sigma = _colored_cov(spec) if spec.family == "colored" else None
    problem, truth = generate_rsn_instance(spec.n, spec.m, spec.k, s, spec.sigma,
                                           "gaussian-outlier", Sigma, RngStream(spec.seed, t))
    outs = _rsn_solve(spec, problem, truth, Sigma)
    return {name: float(np.sum((outs[name].x_hat - truth.x0) ** 2)) for name in spec.methods}


U_SUPPORT_METHODS = ("Huber", "P3", "P4(1)")


def _rsn_table_trial(job):
    spec, s, t = job
    problem, truth = generate_rsn_instance(spec.n, spec.m, spec.k, s, spec.sigma,
                                           "laplacian-outlier", None, RngStream(spec.seed, t))
    outs = _rsn_solve(spec, problem, truth)
    res = {}
    for name in spec.methods:
        if name in U_SUPPORT_METHODS:
            rep = classify(outs[name], truth, "u-support")
        else:
            rep = classify(outs[name], truth, "residual", SUCCESS_TOL, norm="l2")
        res[name] = (rep.per_sensor_correct, rep.whole_network_success)
    return res


# ----------------------------------------------------------- experiment level

@dataclass(frozen=True)
class PhaseCell:
    gamma: float
    beta: float
    n: int
    m: int
    k: int
    s: int
    trials: int
    success_rate: float


@dataclass
class PhaseDiagram:
    cells: list
    curve: list = field(default_factory=list)   # (gamma, beta_star) samples


@dataclass(frozen=True)
class TableRow:
    method: str
    s: int
    per_sensor_pct: float
    whole_network_pct: float


@dataclass(frozen=True)
class MSERow:
    method: str
    s: int
    mse: float
    trials: int


def phase_grid(n: int, m: int, n_gammas: int = 10) -> list[tuple[int, int]]:
    """``(k, s)`` cells: ``k = round(n / (gamma m))`` over ``n_gammas`` values of
    ``gamma`` evenly spaced in ``(0.1, 1]``, then every ``s`` from ``ceil(k/2)`` to ``k``."""
    gammas = np.linspace(0.1, 1.0, n_gammas + 1)[1:]
    ks = []
    for g in gammas:
        k = int(math.floor(n / (g * m) + 0.5))
        if k >= 1 and k * m >= n and k not in ks:
            ks.append(k)
    if not ks:
        raise ValueError(f"no valid k for n={n}, m={m}")
    return [(k, s) for k in sorted(ks, reverse=True) for s in range(math.ceil(k / 2), k + 1)]


def run_phase_diagram(spec: ExperimentSpec, threads: int = 1) -> PhaseDiagram:
    """Empirical success rate of the sum-of-norms solver over a ``(gamma, beta)`` grid.

    ``gamma`` is reported as the realized ``n / (k m)``.
    """
    if spec.family != "phase-diagram":
        raise ValueError("spec.family must be phase-diagram")
    pairs = spec.nm_pairs or ((spec.n, spec.m),)
    cells, jobs = [], []
    for n, m in pairs:
        for k, s in phase_grid(n, m, spec.n_gammas):
            cells.append((n, m, k, s))
            jobs.extend((n, m, k, s, spec.seed, t) for t in range(spec.trials))
    flags = _map_trials(_phase_trial, jobs, threads)
    out = []
    for c, (n, m, k, s) in enumerate(cells):
        hits = sum(flags[c * spec.trials:(c + 1) * spec.trials])
        out.append(PhaseCell(n / (k * m), s / k, n, m, k, s, spec.trials, hits / spec.trials))
    g = np.linspace(0.01, 1.0, 100)
    curve = [(float(x), float((np.sqrt(x) + 1.0) / 2.0)) for x in g]
    return PhaseDiagram(out, curve)


def _run_table(spec: ExperimentSpec, trial_fn, threads: int) -> list[TableRow]:
    jobs = [(spec, s, t) for s in spec.s_values for t in range(spec.trials)]
    results = _map_trials(trial_fn, jobs, threads)
    rows = []
    for name in spec.methods:
        for j, s in enumerate(spec.s_values):
            chunk = results[j * spec.trials:(j + 1) * spec.trials]
            per = math.fsum(r[name][0] for r in chunk) / spec.trials
            whole = sum(r[name][1] for r in chunk) / spec.trials
            rows.append(TableRow(name, s, 100.0 * per, 100.0 * whole))
    return rows


def run_rs_table(spec: ExperimentSpec, threads: int = 1) -> list[TableRow]:
    """Classification accuracy of the noise-free estimators (per sensor and whole network)."""
    if spec.family != "rs-table":
        raise ValueError("spec.family must be rs-table")
    return _run_table(spec, _rs_trial, threads)


def run_rsn_table(spec: ExperimentSpec, threads: int = 1) -> list[TableRow]:
    """Classification accuracy under noise with Laplacian outliers.

    Estimators without an outlier estimate are scored by the l2 residual rule;
    Huber and the outlier-penalized solvers by the support of ``u``.
    """
    if spec.family != "rsn-table":
        raise ValueError("spec.family must be rsn-table")
    return _run_table(spec, _rsn_table_trial, threads)


def run_mse_curve(spec: ExperimentSpec, threads: int = 1) -> list[MSERow]:
    """Empirical ``E||x_hat - x0||^2`` per method and ``s`` (white or colored noise)."""
    if spec.family not in ("rsn-mse", "colored"):
        raise ValueError("spec.family must be rsn-mse or colored")
    jobs = [(spec, s, t) for s in spec.s_values for t in range(spec.trials)]
    results = _map_trials(_mse_trial, jobs, threads)
    rows = []
    for name in spec.methods:
        for j, s in enumerate(spec.s_values):
            chunk = results[j * spec.trials:(j + 1) * spec.trials]
            rows.append(MSERow(name, s, math.fsum(r[name] for r in chunk) / spec.trials, spec.trials))
    return rows


# ------------------------------------------------------------------- output

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def phase_csv(diagram: PhaseDiagram) -> str:
    return _csv_text(PHASE_HEADER, [
        (f"{c.gamma:.6f}", f"{c.beta:.6f}", c.n, c.m, c.k, c.s, c.trials, f"{c.success_rate:.4f}")
        for c in diagram.cells])


def table_csv(rows: Sequence[TableRow]) -> str:
    return _csv_text(TABLE_HEADER, [
        (r.method, r.s, f"{r.per_sensor_pct:.2f}", f"{r.whole_network_pct:.2f}") for r in rows])


def mse_csv(rows: Sequence[MSERow]) -> str:
    return _csv_text(MSE_HEADER, [(r.method, r.s, f"{r.mse:.6e}", r.trials) for r in rows])


def manifest(spec: ExperimentSpec, extra: dict | None = None) -> str:
    """JSON record of the spec, seed and package version."""
    doc = {"spec": asdict(spec), "seed": spec.seed, "version": __version__,
           "numpy": np.__version__}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
