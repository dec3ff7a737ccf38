"""Command-line front end: ``octrl {check,solve,verify,oracle,sweep,example1}``.

Exit codes: 0 pass, 1 a definitive FAIL verdict, 2 usage or configuration
error, 3 numeric failure. Every subcommand can write a versioned JSON report
(``--report``); trajectories are written as CSV (``--out``).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .checks import (
    CheckError,
    CheckReport,
    _clean,
    builtin_certificate,
    check_basic,
    check_f_concavity_and_cone,
    check_H_concavity,
    check_scaling_inequality,
)
from .expr import ExprError
from .hamiltonian import MultiplierPath, costate_residual_all, multiplier_from_path
from .oracle import DiscretizedProblem, OracleError, backward_induction, compare_objectives
from .problem import AdmissiblePath, ProblemError, load_spec
from .solver import ShootingConfig, SolverError, linearize, shoot
from .verify import VerifyError, certify_sufficient, closed_form_example1, example1_spec, verify_necessary

SCHEMA_VERSION = "1.0"
CSV_HEADER = ("t", "x", "c", "lambda", "euler_residual", "tvc_proxy")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# CSV


def emit_csv(path, t, x, c, lam, euler_residual, tvc) -> None:
    """Write the trajectory table; floats are written with ``repr`` so they round-trip."""
    cols = [np.asarray(v, dtype=float) for v in (t, x, c, lam, euler_residual, tvc)]
    n = len(cols[0])
    if n == 0:
        raise ValueError("empty trajectory: nothing to write")
    if any(len(v) != n for v in cols):
        raise ValueError("trajectory columns have different lengths")
    rows = [",".join(repr(float(v[k])) for v in cols) for k in range(n)]
    Path(path).write_text(",".join(CSV_HEADER) + "\n" + "\n".join(rows) + "\n", encoding="utf-8")


def trajectory_columns(s, p: AdmissiblePath, m: MultiplierPath | None = None):
    m = multiplier_from_path(s, p) if m is None else m
    res = costate_residual_all(s, p, m)
    return p.t, p.x, p.c, m.lam, res, m.lam * p.x


def read_path_csv(path) -> tuple[AdmissiblePath, MultiplierPath | None]:
    """Read ``t,x,c`` (and ``lambda`` when present) from a trajectory CSV."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise UsageError(f"{path}: no rows")
    missing = {"t", "x", "c"} - set(rows[0])
    if missing:
        raise UsageError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
    try:
        t = np.array([float(r["t"]) for r in rows])
        x = np.array([float(r["x"]) for r in rows])
        c = np.array([float(r["c"]) for r in rows])
        lam = np.array([float(r["lambda"]) for r in rows]) if "lambda" in rows[0] else None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: bad number: {exc}") from None
    try:
        p = AdmissiblePath(t, x, c)
        m = MultiplierPath(t, lam) if lam is not None else None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return p, m


# ---------------------------------------------------------------------------
# Report plumbing


def _spec(args):
    overrides = {}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects NAME=VALUE, got {item!r}")
        try:
            overrides[key.strip()] = float(val)
        except ValueError:
            raise UsageError(f"--set {key}: not a number: {val!r}") from None
    try:
        return load_spec(args.problem, overrides)
    except ProblemError as exc:
        raise UsageError(str(exc)) from None


def _cert(args):
    if not getattr(args, "family", None):
        return None
    try:
        return builtin_certificate(args.family, args.lambda_bar, args.sigma)
    except CheckError as exc:
        raise UsageError(str(exc)) from None


def write_report(path, report: dict) -> None:
    text = json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg)


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


# ---------------------------------------------------------------------------
# Subcommands; each returns (exit_code, results, spec)


def cmd_check(args, timings):
    s = _spec(args)
    cert = _cert(args)
    box = tuple(args.box)
    t0 = time.perf_counter()
    try:
        recs = [check_basic(s, box, args.n), check_H_concavity(s, sample_box=box),
                check_f_concavity_and_cone(s, sample_box=box)]
        if cert is not None:
            recs.append(check_scaling_inequality(s, cert, sample_box=box))
    except ExprError as exc:
        raise ArithmeticError(str(exc)) from None
    rep = CheckReport(recs)
    timings["check"] = time.perf_counter() - t0
    for r in rep.records:
        _say(args, f"{r.name:20s} {_verdict(r.passed)}  margin={r.margin:.6g}")
    results = {"checks": rep.to_dict(), "scaling_certificate": None if cert is None else cert.to_dict()}
    return (EXIT_PASS if rep.passed else EXIT_FAIL), results, s


def _shoot_config(args):
    return ShootingConfig(T=args.T, tol_c0=args.tol_c0, tol_tvc=args.tol_tvc, n_out=args.n_out)


def cmd_solve(args, timings):
    s = _spec(args)
    t0 = time.perf_counter()
    res = shoot(s, _shoot_config(args))
    timings["shoot"] = time.perf_counter() - t0
    results = {"shooting": res.to_dict()}
    if res.steady_state is not None:
        results["linearization"] = linearize(s.limit_spec(), res.steady_state).to_dict()
    if args.out:
        emit_csv(args.out, *trajectory_columns(s, res.trajectory, res.trajectory.multiplier()))
        results["csv"] = str(args.out)
    _say(args, f"c0 = {res.c0!r}")
    _say(args, f"tvc proxy at T = {res.tvc_proxy_at_T:.3e}  {_verdict(res.verified)}")
    return (EXIT_PASS if res.verified else EXIT_FAIL), results, s


def cmd_verify(args, timings):
    s = _spec(args)
    p, m = read_path_csv(args.path)
    cert = _cert(args)
    t0 = time.perf_counter()
    try:
        nec = verify_necessary(s, p, m, cert, args.tol_tvc)
        results = {"necessary": nec.to_dict()}
        ok = nec.consistent
        if args.certify:
            c = certify_sufficient(s, p, m, cert, args.tol_tvc)
            results["certificate"] = c.to_dict()
            ok = ok and c.optimal
    except VerifyError as exc:
        results = {"necessary": {"verdict": "violated", "witness": {"check": "multiplier",
                                                                    "message": str(exc)}}}
        ok = False
    timings["verify"] = time.perf_counter() - t0
    _say(args, f"necessary conditions: {results['necessary']['verdict']}")
    if results["necessary"].get("witness"):
        _say(args, f"witness: {json.dumps(_clean(results['necessary']['witness']), sort_keys=True)}")
    if "certificate" in results:
        _say(args, f"certified optimal: {results['certificate']['optimal']}")
    return (EXIT_PASS if ok else EXIT_FAIL), results, s


def cmd_oracle(args, timings):
    s = _spec(args)
    t0 = time.perf_counter()
    sol_path = None
    if args.terminal == "free":
        terminal = "free"
    else:
        res = shoot(s, ShootingConfig(T=max(args.T, ShootingConfig().horizon(s.theta))))
        sol_path = res.trajectory
        terminal = (float(np.interp(args.T, sol_path.t, sol_path.x)) if args.terminal == "pin"
                    else float(args.terminal))
    timings["shoot"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    d = DiscretizedProblem.build(s, args.T, args.dt, args.n_x, terminal=terminal)
    sol = backward_induction(s, d)
    timings["oracle"] = time.perf_counter() - t1
    if args.csv:
        sol.export_csv(args.csv)
    results = {
        "oracle": {
            "T": args.T, "dt": args.dt, "n_x": len(d.x_grid), "terminal": terminal,
            "backend": sol.backend, "greedy_c0": float(sol.greedy.c[0]),
            "greedy_objective": sol.greedy_objective, "value_at_x0": sol.value(0, s.x0),
            "pin_penalty": sol.pin_penalty, "dead_nodes": sol.dead_nodes,
        }
    }
    ok = True
    if sol_path is not None:
        ja, jb, gap = compare_objectives(s, sol_path, sol.greedy, args.T)
        rel = abs(gap) / abs(ja) if ja != 0 else abs(gap)
        c_rel = abs(sol.greedy.c[0] / sol_path.c[0] - 1.0)
        ok = rel <= args.rel_tol and c_rel <= args.c0_tol
        results["comparison"] = {"solver_objective": ja, "oracle_objective": jb, "gap": gap,
                                 "relative_gap": rel, "solver_c0": float(sol_path.c[0]),
                                 "c0_relative_diff": c_rel, "pass": ok}
        _say(args, f"solver J = {ja:.8g}, oracle J = {jb:.8g}, relative gap {rel:.3e}  {_verdict(ok)}")
    _say(args, f"oracle greedy c0 = {float(sol.greedy.c[0])!r}")
    return (EXIT_PASS if ok else EXIT_FAIL), results, s


def _sweep_one(job):
    problem, overrides, cfg = job
    row = {"param_value": overrides[1], "c0": math.nan, "x_star": math.nan, "eig1": math.nan,
           "eig2": math.nan, "tvc_proxy": math.nan, "status": "ok", "error": ""}
    try:
        s = load_spec(problem, {overrides[0]: overrides[1]})
        res = shoot(s, cfg)
        row["c0"] = res.c0
        row["tvc_proxy"] = res.tvc_proxy_at_T
        if res.steady_state is not None:
            row["x_star"] = res.steady_state.x_star
            ev = linearize(s.limit_spec(), res.steady_state).eigenvalues
            row["eig1"], row["eig2"] = (complex(v).real for v in ev)
        if not res.verified:
            row["status"] = "unverified"
    except (SolverError, ArithmeticError, ProblemError, ExprError) as exc:
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep_workers(n_jobs: int) -> int:
    env = os.environ.get("OCTRL_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise UsageError(f"OCTRL_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, n_jobs))


def cmd_sweep(args, timings):
    s = _spec(args)
    if args.param not in s.params:
        raise UsageError(f"unknown parameter {args.param!r}; known: {', '.join(sorted(s.params)) or 'none'}")
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    lo, hi = args.range
    values = [lo] if args.n == 1 else list(np.linspace(lo, hi, args.n))
    values = sorted(float(v) for v in values)
    cfg = _shoot_config(args)
    jobs = [(str(args.problem), (args.param, v), cfg) for v in values]
    t0 = time.perf_counter()
    workers = sweep_workers(len(jobs))
    if workers == 1:
        rows = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    timings["sweep"] = time.perf_counter() - t0
    cols = ["param", "param_value", "c0", "x_star", "eig1", "eig2", "tvc_proxy", "status", "error"]
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([args.param] + [repr(float(r[k])) for k in cols[1:7]] + [r["status"], r["error"]])
    for r in rows:
        _say(args, f"{args.param}={r['param_value']!r}: c0={r['c0']!r} [{r['status']}]")
    ok = all(r["status"] == "ok" for r in rows)
    return (EXIT_PASS if ok else EXIT_FAIL), {"sweep": {"param": args.param, "workers": workers,
                                                         "rows": rows}}, s


def cmd_example1(args, timings):
    t0 = time.perf_counter()
    try:
        s = example1_spec(args.R, args.omega, args.theta, args.x0)
        grid = np.linspace(0.0, args.T, args.nodes)
        traj, m = closed_form_example1(args.R, args.omega, args.theta, args.x0, grid)
    except (VerifyError, ProblemError) as exc:
        raise UsageError(str(exc)) from None
    cert = builtin_certificate("log", args.lambda_bar)
    c = certify_sufficient(s, traj, m, cert)
    timings["example1"] = time.perf_counter() - t0
    if args.out:
        emit_csv(args.out, *trajectory_columns(s, traj, m))
    nec = c.necessary
    results = {"example1": {"c0": float(traj.c[0]), "sup_foc_c": nec.foc.sup_c,
                            "sup_costate": nec.foc.sup_costate, "tvc_last": nec.tvc.last},
               "necessary": nec.to_dict(), "certificate": c.to_dict()}
    _say(args, f"c0 = {float(traj.c[0])!r}; certified optimal: {c.optimal}; unique: {c.unique}")
    return (EXIT_PASS if c.optimal else EXIT_FAIL), results, s


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="octrl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"octrl {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, problem=True):
        if problem:
            sp.add_argument("--problem", required=True, help="problem file (TOML)")
            sp.add_argument("--set", action="append", metavar="NAME=VALUE",
                            help="override a parameter from the problem's [params] table")
        sp.add_argument("--report", help="write a JSON report here")
        sp.add_argument("--quiet", action="store_true")

    def cert_opts(sp):
        sp.add_argument("--family", choices=["log", "crra"], help="builtin scaling certificate")
        sp.add_argument("--sigma", type=float, help="CRRA curvature")
        sp.add_argument("--lambda-bar", type=float, default=0.5)

    def shoot_opts(sp):
        sp.add_argument("--T", type=float, default=None, help="shooting horizon")
        sp.add_argument("--tol-c0", type=float, default=1e-10)
        sp.add_argument("--tol-tvc", type=float, default=1e-6)
        sp.add_argument("--n-out", type=int, default=6001, help="reporting grid size")

    sp = sub.add_parser("check", help="sampled assumption checks")
    common(sp)
    cert_opts(sp)
    sp.add_argument("--box", type=float, nargs=2, default=(1e-2, 1e2), metavar=("LO", "HI"))
    sp.add_argument("--n", type=int, default=64, help="samples per axis")

    sp = sub.add_parser("solve", help="shoot for the optimal path")
    common(sp)
    shoot_opts(sp)
    sp.add_argument("--out", help="trajectory CSV")

    sp = sub.add_parser("verify", help="check a path against the optimality conditions")
    common(sp)
    cert_opts(sp)
    sp.add_argument("--path", required=True, help="trajectory CSV with t,x,c[,lambda]")
    sp.add_argument("--tol-tvc", type=float, default=1e-6)
    sp.add_argument("--certify", action="store_true", help="also run the sufficiency certificate")

    sp = sub.add_parser("oracle", help="backward-induction cross-check")
    common(sp)
    sp.add_argument("--T", type=float, default=100.0)
    sp.add_argument("--dt", type=float, default=0.05)
    sp.add_argument("--n-x", type=int, default=400)
    sp.add_argument("--terminal", default="pin", help="pin (solver's x(T)), free, or a number")
    sp.add_argument("--csv", help="value/policy table CSV")
    sp.add_argument("--rel-tol", type=float, default=0.01)
    sp.add_argument("--c0-tol", type=float, default=0.02)

    sp = sub.add_parser("sweep", help="solve over a parameter range")
    common(sp)
    shoot_opts(sp)
    sp.add_argument("--param", required=True)
    sp.add_argument("--range", type=float, nargs=2, required=True, metavar=("LO", "HI"))
    sp.add_argument("--n", type=int, default=5)
    sp.add_argument("--out", help="aggregated CSV")

    sp = sub.add_parser("example1", help="closed-form linear-wealth example")
    common(sp, problem=False)
    sp.add_argument("--R", type=float, default=0.05)
    sp.add_argument("--omega", type=float, default=0.2)
    sp.add_argument("--theta", type=float, default=0.03)
    sp.add_argument("--x0", type=float, default=1.0)
    sp.add_argument("--T", type=float, default=600.0)
    sp.add_argument("--nodes", type=int, default=20_000)
    sp.add_argument("--lambda-bar", type=float, default=0.5)
    sp.add_argument("--out", help="trajectory CSV")
    return p


COMMANDS = {"check": cmd_check, "solve": cmd_solve, "verify": cmd_verify, "oracle": cmd_oracle,
            "sweep": cmd_sweep, "example1": cmd_example1}


def _config(args) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
            if k not in ("quiet", "report")}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    report = {"schema_version": SCHEMA_VERSION, "tool": "octrl", "version": __version__,
              "backend": BACKEND, "command": argv, "config": None, "spec": None,
              "fingerprint": None, "results": {}, "status": "error", "exit_code": EXIT_USAGE,
              "error": None, "timings": {}}
    args = None
    timings: dict = {}
    start = time.perf_counter()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand (check, solve, verify, oracle, sweep, example1)")
        report["config"] = _config(args)
        code, results, s = COMMANDS[args.command](args, timings)
        report["results"] = results
        report["spec"] = s.describe()
        report["fingerprint"] = s.fingerprint()
        report["status"] = "pass" if code == EXIT_PASS else "fail"
    except UsageError as exc:
        code = EXIT_USAGE
        report["error"] = f"usage: {exc}"
        print(f"octrl: error: {exc}", file=sys.stderr)
    except (SolverError, OracleError, ArithmeticError, ExprError) as exc:
        code = EXIT_NUMERIC
        report["error"] = f"{type(exc).__name__}: {exc}"
        print(f"octrl: numeric failure: {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        code = EXIT_USAGE
        report["error"] = f"{type(exc).__name__}: {exc}"
        print(f"octrl: error: {exc}", file=sys.stderr)
    report["exit_code"] = code
    timings["total"] = time.perf_counter() - start
    report["timings"] = timings
    if args is not None and getattr(args, "report", None):
        write_report(args.report, report)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
