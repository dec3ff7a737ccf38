"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a ``[PASS]`` or ``[FAIL]`` line; the lines are repeated in
the terminal summary under "acceptance criteria".
"""

import math
import random
import time

import numpy as np
import pytest

from exprgen import interior_point, smooth_tree
from fdcheck import derivative_errors, well_scaled
from helpers import ACCEPTANCE_LINES, PROBLEMS, X_STAR_RAMSEY, random_feasible_path, rel
from octrl.checks import builtin_certificate, check_H_concavity, check_scaling_inequality, scaled_consumption
from octrl.hamiltonian import foc_residuals
from octrl.oracle import DiscretizedProblem, backward_induction, compare_objectives
from octrl.problem import AdmissiblePath, load_spec, make_spec
from octrl.solver import find_steady_state, implied_c, linearize, saddle_path_backward, shoot
from octrl.verify import certify_sufficient

THETA, R, OMEGA, X0 = 0.03, 0.05, 0.2, 1.0
C0 = THETA * (X0 + OMEGA / R)


def record(n, ok, text):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def shot(ex1):
    start = time.perf_counter()
    res = shoot(ex1)
    return res, time.perf_counter() - start


def test_1_example1_reproduction(shot):
    res, secs = shot
    err = rel(res.c0, C0)
    record(1, err <= 1e-4 and secs < 5.0,
           f"solve c0={res.c0:.12g} vs {C0:g} (rel err {err:.2e} <= 1e-4), {secs:.2f}s < 5s")


def test_2_closed_form_residuals(ex1, closed_form):
    traj, m = closed_form
    foc = foc_residuals(ex1, traj, m)
    x_ref = (X0 + OMEGA / R - C0 / THETA) * np.exp(R * traj.t) + (C0 / THETA) * np.exp((R - THETA) * traj.t) - OMEGA / R
    x_err = float(np.max(np.abs(traj.x - x_ref) / np.abs(x_ref)))
    ok = foc.sup_c <= 1e-12 and foc.sup_costate <= 1e-4 and x_err <= 1e-10
    record(2, ok, f"sup FOC-c {foc.sup_c:.2e} <= 1e-12, sup costate {foc.sup_costate:.2e} <= 1e-4, "
                  f"x rel err {x_err:.2e} <= 1e-10 ({len(traj)} nodes on [0, 600])")


def test_3_tvc_proxy(closed_form):
    traj, m = closed_form
    proxy = m.lam * traj.x
    peak = int(np.argmax(proxy))
    decreasing = bool(np.all(np.diff(proxy[peak:]) < 0))
    derived = np.exp(-THETA * traj.t) / THETA - OMEGA / (R * C0) * np.exp(-R * traj.t)
    match = float(np.max(np.abs(proxy - derived)))
    ok = decreasing and peak < len(proxy) - 1 and proxy[-1] <= 1e-6 and match <= 1e-9
    record(3, ok, f"proxy decreasing after t={traj.t[peak]:.1f}, value {proxy[-1]:.3e} <= 1e-6 at t=600, "
                  f"|proxy - derived| {match:.1e}")


def test_4_oracle_agreement(ex1, shot):
    res, _ = shot
    sol_path = res.trajectory
    start = time.perf_counter()
    xT = float(np.interp(100.0, sol_path.t, sol_path.x))
    d = DiscretizedProblem.build(ex1, 100.0, 0.05, 400, terminal=xT)
    sol = backward_induction(ex1, d)
    secs = time.perf_counter() - start
    c_err = rel(sol.greedy.c[0], C0)
    ja, jb, gap = compare_objectives(ex1, sol_path, sol.greedy, 100.0)
    j_err = abs(gap) / abs(ja)
    ok = c_err <= 0.02 and j_err <= 0.01 and secs < 60.0
    record(4, ok, f"oracle c0={sol.greedy.c[0]:.6f} (rel err {c_err:.2e} <= 0.02), objective gap "
                  f"{j_err:.2e} <= 0.01, {secs:.1f}s < 60s")


def test_5_steady_state(ramsey):
    ss = find_steady_state(ramsey)
    lin = linearize(ramsey, ss)
    err = rel(ss.x_star, X_STAR_RAMSEY)
    ok = err <= 1e-6 and lin.det < 0
    ev = ", ".join(f"{complex(v).real:.4f}" for v in lin.eigenvalues)
    record(5, ok, f"x*={ss.x_star:.8f} (rel err {err:.1e} <= 1e-6), det J={lin.det:.3e} < 0, eigenvalues {ev}")


def test_6_method_cross_check():
    s = load_spec(PROBLEMS / "ramsey.prob")
    res = shoot(s)
    ss = find_steady_state(s)
    back = saddle_path_backward(s, ss, 1e-6 * ss.x_star, 400.0)
    c_back = implied_c(back, s.x0)
    err = rel(c_back, res.c0)
    record(6, err <= 1e-3, f"shooting c0={res.c0:.10f}, saddle path c0={c_back:.10f}, rel diff {err:.1e} <= 1e-3")


def test_7_assumption_suite():
    margins = {}
    for label, u, cert in [("log", "ln(c)", builtin_certificate("log", 0.5)),
                           ("crra 0.5", "c^0.5/0.5", builtin_certificate("crra", 0.5, 0.5)),
                           ("crra 2", "c^(-1)/(-1)", builtin_certificate("crra", 0.5, 2.0))]:
        s = make_spec(THETA, u, X0, f_text="0.05*x + 0.2")
        margins[label] = check_scaling_inequality(s, cert, n=200).margin
    certs_ok = all(m >= -1e-10 for m in margins.values())

    quad = check_H_concavity(make_spec(THETA, "c^2", X0, f_text="0.05*x + 0.2"))
    quad_ok = (not quad.passed) and quad.witness is not None

    rng = random.Random(20261018)
    worst = math.inf
    for _ in range(1000):
        s, p = random_feasible_path(rng)
        for lam in (0.05, 0.5, 0.95):
            worst = min(worst, float(np.min(scaled_consumption(s, p, lam))))
    paths_ok = worst >= 0

    worst_margin = min(margins.values())
    record(7, certs_ok and quad_ok and paths_ok,
           f"scaling margins (log, crra 0.5, crra 2) min {worst_margin:.2e} >= -1e-10 on 200x200; "
           f"u=c^2 H-concavity {'fails' if not quad.passed else 'passes'} with witness "
           f"{quad.witness is not None}; scaled paths min c {worst:.2e} >= 0 over 1000 paths")


def test_8_differentiation_suite():
    rng = random.Random(8)
    done = skipped = 0
    worst1 = worst2 = 0.0
    while done < 1000:
        e, pt = smooth_tree(rng), interior_point(rng)
        if not well_scaled(e, pt):
            skipped += 1
            continue
        e1, e2 = derivative_errors(e, pt)
        worst1, worst2 = max(worst1, e1), max(worst2, e2)
        done += 1
    ok = worst1 <= 1e-6 and worst2 <= 1e-6
    record(8, ok, f"1000 expressions: worst first-derivative error {worst1:.1e}, second {worst2:.1e} "
                  f"<= 1e-6 ({skipped} ill-scaled draws replaced)")


# Comparison paths for the dominance check, all feasible under x' = R x + w - c.

def _linear_policy_path(t, k, t_switch=math.inf):
    """Consume k * theta * (x + w/R) until t_switch, then the optimal theta * (x + w/R)."""
    y0 = X0 + OMEGA / R
    y_sw = y0 * math.exp((R - k * THETA) * min(t_switch, t[-1]))
    y = np.where(t <= t_switch, y0 * np.exp((R - k * THETA) * t),
                 y_sw * np.exp((R - THETA) * (t - t_switch)))
    kk = np.where(t <= t_switch, k, 1.0)
    return AdmissiblePath(t, y - OMEGA / R, kk * THETA * y)


def _euler_path(t, c0):
    """Euler consumption c0 exp((R - theta) t) from x0."""
    x = (X0 + OMEGA / R - c0 / THETA) * np.exp(R * t) + (c0 / THETA) * np.exp((R - THETA) * t) - OMEGA / R
    return x, c0 * np.exp((R - THETA) * t)


def _exhausting_path(t, c0):
    """Euler path until wealth runs out, then c = w at x = 0."""
    lo, hi = 0.0, t[-1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _euler_path(np.array([mid]), c0)[0][0] > 0:
            lo = mid
        else:
            hi = mid
    tau = lo
    grid = np.union1d(t, [tau])
    x, c = _euler_path(grid, c0)
    after = grid > tau
    x = np.where(after, 0.0, np.maximum(x, 0.0))
    c = np.where(after, OMEGA, c)
    return AdmissiblePath(grid, x, c), tau


def test_9_dominance(ex1, closed_form):
    traj, m = closed_form
    cert = certify_sufficient(ex1, traj, m, builtin_certificate("log", 0.5))
    t = traj.t
    others = {"stationary": AdmissiblePath(t, np.full_like(t, X0), np.full_like(t, R * X0 + OMEGA))}
    for k in (0.5, 0.7, 0.8, 0.9, 0.95):
        x, c = _euler_path(t, k * C0)
        others[f"over-saving c0x{k}"] = AdmissiblePath(t, x, c)
    for k in (1.05, 1.1, 1.2, 1.5, 2.0, 3.0):
        others[f"over-consuming c0x{k}"] = _exhausting_path(t, k * C0)[0]
    for k, switches in ((0.8, (10, 50, 100, 200)), (1.2, (10, 20, 30, 40))):
        for t1 in switches:
            others[f"deviate k={k} until {t1}"] = _linear_policy_path(t, k, float(t1))
    assert len(others) == 20
    gaps = {name: compare_objectives(ex1, traj, p, 600.0)[2] for name, p in others.items()}
    worst = min(gaps, key=gaps.get)
    ok = cert.optimal and all(g > 0 for g in gaps.values())
    record(9, ok, f"certified path beats all 20 comparison paths on [0, 600]; smallest gap "
                  f"{gaps[worst]:.3e} ({worst})")
