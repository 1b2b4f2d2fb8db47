"""Command-line interface: ``robust-sensing <command> [options]``.

Exit status is 0 on success, 2 on a usage error and 1 when a stage fails at
run time (the message names the stage).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import analysis, experiments, model
from .linalg import RngStream, toeplitz_sqrt_pair
from .model import SolverConfig
from .solvers import (HUBER_TAU, lambda_rule_of_thumb, solve_huber_scalar, solve_l1, solve_ls,
                      solve_p1, solve_p2, solve_p3, solve_p3_colored, solve_p3_path, solve_p4,
                      solve_p4_colored)

METHODS = ("ls", "l1", "huber", "p1", "p2", "p3", "p3-path", "p4", "p3-colored",
           "p4-colored", "p0-oracle", "rsn-oracle")
_defaults = SolverConfig()


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, ArithmeticError, OSError, KeyError, TypeError) as exc:
        raise StageError(name, exc) from exc


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ------------------------------------------------------------------- parser

class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for options whose default is 'not given'."""

    def _get_help_string(self, action):
        if action.default is None or action.default is False:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    fmt = _Formatter
    p = argparse.ArgumentParser(prog="robust-sensing", formatter_class=fmt,
                                description="Estimate a vector from sensor blocks, some of which are unreliable.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", formatter_class=fmt, help="run one estimator on a problem file")
    s.add_argument("--method", choices=METHODS, required=True, help="estimator")
    s.add_argument("--input", required=True, help="problem JSON file")
    s.add_argument("--out", default="-", help="result JSON file ('-' for stdout)")
    s.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="outlier penalty for p3/p4 and their colored versions")
    s.add_argument("--lambda-auto", action="store_true",
                   help="use lambda = 1.34 * sigma * sqrt(m); needs --sigma")
    s.add_argument("--lambda-grid", type=_float_list, default=None,
                   help="descending comma-separated penalties for p3-path")
    s.add_argument("--sigma", type=float, default=None, help="noise standard deviation")
    s.add_argument("--tau", type=float, default=None,
                   help="Huber cutoff (default 1.34 * sigma)")
    s.add_argument("--delta", type=float, default=_defaults.delta, help="log-surrogate offset")
    s.add_argument("--epsilon", type=float, default=_defaults.epsilon, help="relative-change stop threshold")
    s.add_argument("--max-iters", type=int, default=_defaults.max_iters, help="iteration cap per solve")
    s.add_argument("--outer-iters", type=int, default=1, help="reweighting passes for p2/p4")
    s.add_argument("--toeplitz-rho", type=float, default=None,
                   help="colored noise covariance sigma^2 * toeplitz(rho^j)")
    s.add_argument("--cov", default=None, help="noise covariance as a JSON matrix or .npy file")
    s.add_argument("--s", type=int, default=None, help="number of reliable sensors (rsn-oracle)")
    s.add_argument("--feas-tol", type=float, default=1e-8, help="p0-oracle feasibility tolerance")
    s.add_argument("--seed", type=int, default=None, help="accepted for symmetry; solvers are deterministic")

    c = sub.add_parser("check-unique", formatter_class=fmt,
                       help="rank test for a unique most-consistent solution")
    c.add_argument("--input", required=True, help="problem JSON file")
    c.add_argument("--s", type=int, required=True, help="number of reliable sensors (> k/2)")

    f = sub.add_parser("falsify-range", formatter_class=fmt,
                       help="random search for a range-condition violation")
    f.add_argument("--input", required=True, help="problem JSON file")
    f.add_argument("--s", type=int, required=True, help="number of reliable sensors")
    f.add_argument("--trials", type=int, default=1000, help="random directions to try")
    f.add_argument("--seed", type=int, default=0, help="random seed")

    b = sub.add_parser("bound", formatter_class=fmt, help="recovery bound constants")
    for name in ("n", "m", "k", "s"):
        b.add_argument(f"--{name}", type=int, required=True, help=f"dimension {name}")
    b.add_argument("--alpha", type=float, default=0.5, help="exponent split, in (0, 1)")

    r = sub.add_parser("reduce-mcle", formatter_class=fmt,
                       help="embed C x = d as a sensor problem")
    r.add_argument("--input", required=True, help='JSON {"C": [[...]], "d": [...]}')
    r.add_argument("--m", type=int, default=2, help="block height (>= 2)")
    r.add_argument("--out", default="-", help="problem JSON output")

    def experiment(name, helptext, family):
        d = experiments.ExperimentSpec.default(family, seed=0)
        e = sub.add_parser(name, formatter_class=fmt, help=helptext)
        e.add_argument("--seed", type=int, required=True, help="base seed for all random streams")
        e.add_argument("--trials", type=int, default=d.trials, help="Monte Carlo trials per cell")
        e.add_argument("--out", default="-", help="CSV (or JSON) output")
        e.add_argument("--manifest", default=None, help="JSON manifest path")
        e.add_argument("--format", choices=("csv", "json"), default="csv", help="output format")
        e.add_argument("--threads", type=int, default=None,
                       help="worker processes (falls back to ROBUST_SENSING_THREADS, then 1)")
        return e, d

    e, d = experiment("phase-diagram", "success rate of the sum-of-norms solver", "phase-diagram")
    e.add_argument("--pairs", default="40x20,20x10", help="comma-separated n x m pairs")
    e.add_argument("--gammas", type=int, default=d.n_gammas, help="number of gamma values")

    for name, family, helptext in (("rs-table", "rs-table", "noise-free classification table"),
                                   ("rsn-table", "rsn-table", "noisy classification table"),
                                   ("mse-curve", "rsn-mse", "MSE versus number of reliable sensors")):
        e, d = experiment(name, helptext, family)
        e.add_argument("--n", type=int, default=d.n, help="unknowns")
        e.add_argument("--m", type=int, default=d.m, help="measurements per sensor")
        e.add_argument("--k", type=int, default=d.k, help="sensors")
        e.add_argument("--s-values", type=_int_list, default=",".join(map(str, d.s_values)),
                       help="comma-separated numbers of reliable sensors")
        e.add_argument("--methods", default=None,
                       help="comma-separated subset of " + ",".join(
                           experiments.COLORED_METHODS if name == "mse-curve" else d.methods)
                       + ("; colored solvers need --colored" if name == "mse-curve" else "")
                       + " (default: all available)")
        e.add_argument("--outer-iters", type=int, default=d.outer_iters, help="reweighting passes")
        e.add_argument("--delta", type=float, default=d.delta, help="log-surrogate offset")
        if name != "rs-table":
            e.add_argument("--snr-db", type=float, default=d.snr_db, help="SNR in dB; sigma = 10^(-SNR/20)")
            e.add_argument("--tau-factor", type=float, default=d.tau_factor,
                           help="Huber cutoff tau = factor * sigma; lambda = tau * sqrt(m)")
        if name == "mse-curve":
            e.add_argument("--colored", action="store_true",
                           help="Toeplitz-correlated noise; enables the colored solvers")
            e.add_argument("--toeplitz-rho", type=float, default=d.toeplitz_rho,
                           help="noise correlation: covariance sigma^2 * toeplitz(rho^j)")
    return p


# ----------------------------------------------------------------- commands

def _load_cov(args, problem):
    if args.cov is not None:
        path = Path(args.cov)
        if path.suffix == ".npy":
            return np.load(path)
        return np.asarray(json.loads(path.read_text()), dtype=float)
    T, _ = toeplitz_sqrt_pair(args.toeplitz_rho ** np.arange(problem.A.shape[0]))
    return args.sigma ** 2 * T


def _cmd_solve(args, parser) -> int:
    if args.lambda_auto and args.sigma is None:
        parser.error("--lambda-auto requires --sigma")
    if args.lambda_auto and args.lam is not None:
        parser.error("--lambda and --lambda-auto are mutually exclusive")
    colored = args.method in ("p3-colored", "p4-colored")
    if colored and args.cov is None and (args.toeplitz_rho is None or args.sigma is None):
        parser.error(f"{args.method} needs --cov, or --toeplitz-rho with --sigma")
    if args.method == "huber" and args.tau is None and args.sigma is None:
        parser.error("huber needs --tau or --sigma")
    if args.method == "rsn-oracle" and args.s is None:
        parser.error("rsn-oracle needs --s")
    if args.method == "p3-path" and not args.lambda_grid:
        parser.error("p3-path needs --lambda-grid")
    if args.method in ("p3", "p4") or colored:
        if args.lam is None and not args.lambda_auto:
            parser.error(f"{args.method} needs --lambda or --lambda-auto")

    problem, _, _ = _stage("load", model.load, args.input)
    lam = args.lam
    if args.lambda_auto:
        lam = lambda_rule_of_thumb(args.sigma, problem.m)
        if colored:
            lam /= args.sigma ** 2     # same rule in whitened units
    cfg = _stage("config", SolverConfig, lam=lam if lam is not None else 1.0, delta=args.delta,
                 epsilon=args.epsilon, max_iters=args.max_iters)
    meth = args.method

    def run():
        if meth == "ls":
            return solve_ls(problem)
        if meth == "l1":
            return solve_l1(problem, cfg)
        if meth == "huber":
            tau = args.tau if args.tau is not None else HUBER_TAU * args.sigma
            return solve_huber_scalar(problem, tau, cfg)
        if meth == "p1":
            return solve_p1(problem, cfg)
        if meth == "p2":
            return solve_p2(problem, cfg, args.outer_iters)
        if meth == "p3":
            return solve_p3(problem, cfg)
        if meth == "p3-path":
            return solve_p3_path(problem, args.lambda_grid, cfg)
        if meth == "p4":
            return solve_p4(problem, cfg, args.outer_iters)
        if meth == "p3-colored":
            return solve_p3_colored(problem, _load_cov(args, problem), cfg)
        if meth == "p4-colored":
            return solve_p4_colored(problem, _load_cov(args, problem), cfg, args.outer_iters)
        if meth == "p0-oracle":
            return analysis.solve_p0_bruteforce(problem, args.feas_tol)
        return analysis.solve_rsn_bruteforce(problem, args.s)

    result = _stage("solve", run)
    doc = {"method": meth}
    if lam is not None:
        doc["lambda"] = lam
    if meth == "p3-path":
        doc["path"] = [dict(model.output_to_dict(o), **{"lambda": float(g)})
                       for o, g in zip(result, args.lambda_grid)]
    elif meth == "p0-oracle":
        doc.update(x_hat=result.x.tolist(), support=list(result.support), s=result.s)
    elif meth == "rsn-oracle":
        doc.update(x_hat=result.x.tolist(), support=list(result.support),
                   objective=result.objective, rank_deficient_subsets=result.rank_deficient)
    else:
        doc.update(model.output_to_dict(result))
    _stage("write", _write, args.out, json.dumps(doc, indent=1) + "\n")
    return 0


def _cmd_check_unique(args, parser) -> int:
    problem, _, _ = _stage("load", model.load, args.input)
    verdict = _stage("check", analysis.check_uniqueness_rank, problem, args.s)
    if verdict is None:
        print("unique")
    else:
        print("not unique: rank-deficient subset " + ",".join(map(str, verdict)))
    return 0


def _cmd_falsify(args, parser) -> int:
    problem, _, _ = _stage("load", model.load, args.input)
    hit = _stage("search", analysis.falsify_range_condition, problem, args.s, args.trials,
                 RngStream(args.seed))
    if hit is None:
        print(f"no counterexample found in {args.trials} trials (not a proof)")
    else:
        print(f"counterexample: s smallest blocks {list(hit.support)} sum {hit.lhs:.6g} "
              f"<= rest {hit.rhs:.6g}")
        print("u = " + json.dumps(hit.u.tolist()))
    return 0


def _cmd_bound(args, parser) -> int:
    bound = _stage("bound", analysis.recovery_bound_constants, args.n, args.m, args.k, args.s, args.alpha)
    for key in ("beta", "gamma", "beta_star", "c0"):
        print(f"{key} = {getattr(bound, key):.6g}")
    print(f"min_m = {bound.min_m if bound.min_m is not None else 'n/a'}")
    if not bound.applicable:
        print("bound inapplicable: beta <= beta_star")
    return 0


def _cmd_reduce(args, parser) -> int:
    def read():
        doc = json.loads(Path(args.input).read_text())
        return doc["C"], doc["d"]
    C, d = _stage("load", read)
    problem = _stage("reduce", analysis.mcle_to_rs, C, d, args.m)
    _stage("write", _write, args.out, model.dumps(problem))
    return 0


def _methods(args, allowed) -> tuple:
    names = tuple(v.strip() for v in args.methods.split(",") if v.strip())
    bad = [v for v in names if v not in allowed]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {', '.join(allowed)}")
    return names


def _cmd_experiment(args, parser) -> int:
    cmd = args.command
    try:
        threads = experiments.resolve_threads(args.threads)
    except ValueError as exc:
        parser.error(str(exc))
    if args.trials < 1:
        parser.error("--trials must be >= 1")

    if cmd == "phase-diagram":
        try:
            pairs = tuple(tuple(int(v) for v in p.lower().split("x")) for p in args.pairs.split(","))
            if any(len(p) != 2 for p in pairs):
                raise ValueError
        except ValueError:
            parser.error(f"--pairs must look like 40x20,20x10, got {args.pairs!r}")
        spec = _stage("spec", experiments.ExperimentSpec.default, "phase-diagram", args.seed,
                      trials=args.trials, nm_pairs=pairs, n_gammas=args.gammas)
        diagram = _stage("experiment", experiments.run_phase_diagram, spec, threads)
        if args.format == "csv":
            text = experiments.phase_csv(diagram)
        else:
            text = json.dumps([asdict(c) for c in diagram.cells], indent=1) + "\n"
        extra = {"beta_star_curve": diagram.curve}
    else:
        family = {"rs-table": "rs-table", "rsn-table": "rsn-table",
                  "mse-curve": "colored" if getattr(args, "colored", False) else "rsn-mse"}[cmd]
        allowed = {"rs-table": experiments.RS_METHODS, "rsn-table": experiments.RSN_METHODS,
                   "rsn-mse": experiments.RSN_METHODS, "colored": experiments.COLORED_METHODS}[family]
        try:
            methods = allowed if args.methods is None else _methods(args, allowed)
        except argparse.ArgumentTypeError as exc:
            parser.error(str(exc))
        over = dict(n=args.n, m=args.m, k=args.k, s_values=args.s_values, trials=args.trials,
                    methods=methods, outer_iters=args.outer_iters, delta=args.delta)
        if cmd != "rs-table":
            over.update(snr_db=args.snr_db, tau_factor=args.tau_factor)
        if family == "colored":
            over["toeplitz_rho"] = args.toeplitz_rho
        spec = _stage("spec", experiments.ExperimentSpec.default, family, args.seed, **over)
        runner = {"rs-table": experiments.run_rs_table, "rsn-table": experiments.run_rsn_table,
                  "rsn-mse": experiments.run_mse_curve, "colored": experiments.run_mse_curve}[family]
        rows = _stage("experiment", runner, spec, threads)
        if args.format == "json":
            text = json.dumps([asdict(r) for r in rows], indent=1) + "\n"
        elif family in ("rsn-mse", "colored"):
            text = experiments.mse_csv(rows)
        else:
            text = experiments.table_csv(rows)
        extra = None
    _stage("write", _write, args.out, text)
    if args.manifest is not None:
        _stage("write", _write, args.manifest, experiments.manifest(spec, extra))
    return 0


COMMANDS = {
    "solve": _cmd_solve,
    "check-unique": _cmd_check_unique,
    "falsify-range": _cmd_falsify,
    "bound": _cmd_bound,
    "reduce-mcle": _cmd_reduce,
    "phase-diagram": _cmd_experiment,
    "rs-table": _cmd_experiment,
    "rsn-table": _cmd_experiment,
    "mse-curve": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args, parser)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    except StageError as exc:
        print(f"robust-sensing: error in stage {exc}", file=sys.stderr)
        return 1
    except model.SchemaError as exc:
        print(f"robust-sensing: error in stage load: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
