"""Necessary-condition and sufficiency verdicts for candidate paths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .checks import (
    CheckReport,
    ScalingCertificate,
    TailEstimate,
    check_basic,
    check_f_concavity_and_cone,
    check_H_concavity,
    check_scaling_inequality,
    log_grid,
    tail_integral_estimate,
    _clean,
)
from .expr import ExprError
from .hamiltonian import (
    FocResiduals,
    MultiplierError,
    MultiplierPath,
    costate_threshold,
    foc_residuals,
    multiplier_from_path,
)
from .problem import AdmissiblePath, FeasibilityReport, ProblemSpec, feasibility_check, template_linear_wealth
from .solver import Trajectory


class VerifyError(ValueError):
    pass


@dataclass
class TvcEstimate:
    t: np.ndarray
    samples: np.ndarray
    rate: float  # fitted log-linear decay rate over the last half
    limit: float
    passed: bool | None  # None: no verdict without a sign constraint on x
    tol: float
    inf_c_tail: float
    disc_x_rate: float  # fitted rate of exp(-theta t) x(t) over the last half
    eventually_decreasing: bool

    @property
    def last(self) -> float:
        return float(self.samples[-1])

    @property
    def simple_pair_pass(self) -> bool:
        """``liminf c > 0`` and ``exp(-theta t) x -> 0``, read off the tail."""
        return bool(self.inf_c_tail > 0 and self.disc_x_rate < 0)

    def to_dict(self) -> dict:
        return _clean({
            "last_sample": self.last,
            "t_last": float(self.t[-1]),
            "fitted_rate": self.rate,
            "extrapolated_limit": self.limit,
            "pass": self.passed,
            "tol": self.tol,
            "eventually_decreasing": self.eventually_decreasing,
            "inf_c_tail": self.inf_c_tail,
            "disc_x_rate": self.disc_x_rate,
            "simple_pair_pass": self.simple_pair_pass,
        })


def _log_rate(t, y) -> float:
    y = np.abs(np.asarray(y, dtype=float))
    if not np.any(y > 0):
        return -math.inf
    floor = float(np.max(y)) * 1e-300
    return float(np.polyfit(t, np.log(np.maximum(y, floor)), 1)[0])


def estimate_tvc(s: ProblemSpec, p: AdmissiblePath, m: MultiplierPath | None = None,
                 tol: float = 1e-6) -> TvcEstimate:
    """Samples of ``lam x`` with a log-linear decay fit over the last half.

    Passing needs both a last sample at most ``tol`` and a decay rate that is
    negative by a visible margin over the fitted window, since one small sample
    can be a transient.
    """
    if m is None:
        m = multiplier_from_path(s, p)
    samples = m.lam * p.x
    half = len(p.t) // 2
    tt = p.t[half:]
    rate = _log_rate(tt, samples[half:])
    span = float(tt[-1] - tt[0]) if len(tt) > 1 else 1.0
    decaying = rate * span < -1e-6
    limit = 0.0 if decaying else (float(samples[-1]) if rate <= 0 or not math.isfinite(rate) else math.inf)
    tail = samples[half:]
    eventually = bool(np.all(np.diff(tail) <= 0)) if len(tail) > 1 else True
    passed = None
    if s.state_nonneg:
        passed = bool(samples[-1] <= tol and decaying)
    disc_x = np.exp(-s.theta * tt) * p.x[half:]
    return TvcEstimate(p.t, samples, rate, limit, passed, tol, float(np.min(p.c[half:])),
                       _log_rate(tt, disc_x), eventually)


@dataclass
class NecessaryReport:
    feasibility: FeasibilityReport
    foc: FocResiduals
    tvc: TvcEstimate
    assumptions: CheckReport
    tail: TailEstimate
    foc_c_tol: float
    costate_tol: float
    witnesses: list = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not self.witnesses

    @property
    def verdict(self) -> str:
        return "consistent" if self.consistent else "violated"

    @property
    def witness(self) -> dict | None:
        return self.witnesses[0] if self.witnesses else None

    def to_dict(self) -> dict:
        return _clean({
            "verdict": self.verdict,
            "witness": self.witness,
            "witnesses": self.witnesses,
            "feasibility": self.feasibility.to_dict(),
            "foc": {**self.foc.to_dict(), "tol_c": self.foc_c_tol, "tol_costate": self.costate_tol},
            "tvc": self.tvc.to_dict(),
            "assumptions": self.assumptions.to_dict(),
            "objective": self.tail.to_dict(),
        })


def _assumption_report(s, cert, box) -> CheckReport:
    recs = [check_basic(s, box), check_H_concavity(s, sample_box=box),
            check_f_concavity_and_cone(s, sample_box=box)]
    if cert is not None:
        recs.append(check_scaling_inequality(s, cert, sample_box=box))
    return CheckReport(recs)


def verify_necessary(s: ProblemSpec, p: AdmissiblePath, m: MultiplierPath | None = None,
                     cert: ScalingCertificate | None = None, tol_tvc: float = 1e-6,
                     sample_box=(1e-2, 1e2), assumptions: CheckReport | None = None) -> NecessaryReport:
    """Feasibility, the first-order conditions, the TVC and the standing assumptions.

    With ``m`` omitted the multiplier is derived from the path, so the
    consumption condition holds by construction and only the costate
    equation is informative.
    """
    feas = feasibility_check(p, s)
    witnesses = []
    try:
        mm = multiplier_from_path(s, p) if m is None else m
    except MultiplierError as exc:
        raise VerifyError(str(exc)) from None
    foc = foc_residuals(s, p, mm)
    c_tol = max(1e-12, 1e-9 * float(np.max(np.abs(mm.lam))))
    k_tol = costate_threshold(mm)
    tvc = estimate_tvc(s, p, mm, tol_tvc)
    if assumptions is None:
        assumptions = _assumption_report(s, cert, sample_box)
    try:
        tail = tail_integral_estimate(s, p)
    except ExprError:
        tail = TailEstimate(-math.inf, math.inf, math.nan, math.inf, math.nan, True)
    if foc.sup_c > c_tol:
        witnesses.append({"check": "foc_c", "t": foc.worst_t_c, "residual": foc.sup_c, "tol": c_tol})
    if foc.sup_costate > k_tol:
        witnesses.append({"check": "foc_costate", "t": foc.worst_t_costate,
                          "residual": foc.sup_costate, "tol": k_tol})
    if tvc.passed is False:
        witnesses.append({"check": "tvc", "t": float(p.t[-1]), "sample": tvc.last,
                          "rate": tvc.rate, "tol": tol_tvc})
    if not feas.passed:
        witnesses.append({"check": "feasibility", "t": feas.worst_t, "residual": feas.max_dyn_residual,
                          "min_x": feas.min_x, "min_c": feas.min_c, "tol": feas.tol})
    if tail.diverges:
        witnesses.append({"check": "integrability", "growth_rate": tail.growth_rate})
    for r in assumptions.failures():
        witnesses.append({"check": r.name, "point": r.witness, "margin": r.margin})
    return NecessaryReport(feas, foc, tvc, assumptions, tail, c_tol, k_tol, witnesses)


@dataclass
class Certificate:
    objective_value: tuple
    foc_pass: bool
    tvc_pass: bool
    concavity_pass: bool
    state_domain_ok: bool
    optimal: bool
    unique: bool
    hamiltonian_max_pass: bool = False
    necessary: NecessaryReport | None = None

    def to_dict(self) -> dict:
        return _clean({
            "objective_value": list(self.objective_value),
            "foc_pass": self.foc_pass,
            "tvc_pass": self.tvc_pass,
            "concavity_pass": self.concavity_pass,
            "state_domain_ok": self.state_domain_ok,
            "hamiltonian_max_pass": self.hamiltonian_max_pass,
            "optimal": self.optimal,
            "unique": self.unique,
        })


def hamiltonian_max_test(s: ProblemSpec, p: AdmissiblePath, m: MultiplierPath, n_nodes: int = 50,
                         n_c: int = 200, tol: float = 1e-10) -> bool:
    """Does each sampled ``c(t)`` maximize ``H(., x, t, lam)`` over a consumption grid?"""
    idx = np.unique(np.linspace(0, len(p.t) - 1, n_nodes).astype(int))
    for k in idx:
        t, x, c, lam = float(p.t[k]), float(p.x[k]), float(p.c[k]), float(m.lam[k])
        cs = np.concatenate([np.geomspace(c * 1e-3, c * 1e3, n_c), [c]])
        disc = math.exp(-s.theta * t)
        h = disc * s.u_fast.values(cs, x, t) - lam * cs
        h = np.where(np.isnan(h), -np.inf, h)
        if np.max(h) > h[-1] + tol * (1.0 + abs(h[-1])):
            return False
    return True


def _strictly_concave_in_c(s: ProblemSpec, box) -> bool:
    pts = log_grid(box, 32)
    xs = pts if s.u.depends_on("x") else pts[:1]
    for c in pts:
        for x in xs:
            u = s.u_fast.jet(c, x, 0.0)
            if not u[4] < 0 or u[4] * u[7] - u[5] ** 2 < -1e-12 * (1.0 + u[4] ** 2 + u[7] ** 2):
                return False
    return True


def certify_sufficient(s: ProblemSpec, p: AdmissiblePath, m: MultiplierPath | None = None,
                       cert: ScalingCertificate | None = None, tol_tvc: float = 1e-6,
                       sample_box=(1e-2, 1e2)) -> Certificate:
    """Sufficient conditions: finite objective, FOCs, TVC, concave H, state set R+ x R.

    The consumption condition may be replaced by maximization of H over
    consumption; ``unique`` additionally needs ``u_cc < 0`` with a
    negative-semidefinite Hessian of u on the sample box. ``optimal`` is
    never set unless :func:`verify_necessary` is consistent on the same grid.
    """
    nec = verify_necessary(s, p, m, cert, tol_tvc, sample_box)
    mm = multiplier_from_path(s, p) if m is None else m
    foc_c = nec.foc.sup_c <= nec.foc_c_tol
    hmax = hamiltonian_max_test(s, p, mm)
    costate = nec.foc.sup_costate <= nec.costate_tol
    foc_pass = bool((foc_c or hmax) and costate)
    tvc_pass = bool(nec.tvc.passed)
    conc = bool(nec.assumptions["H_concavity"].passed and nec.assumptions["f_concavity"].passed)
    domain_ok = bool(s.state_nonneg and nec.feasibility.min_x >= -nec.feasibility.tol)
    tail = nec.tail
    finite = not tail.diverges and math.isfinite(tail.lower) and math.isfinite(tail.upper)
    optimal = bool(foc_pass and tvc_pass and conc and domain_ok and finite and nec.feasibility.passed
                   and nec.consistent)
    unique = bool(optimal and _strictly_concave_in_c(s, sample_box))
    return Certificate((tail.lower, tail.upper), foc_pass, tvc_pass, conc, domain_ok, optimal,
                       unique, hmax, nec)


# ---------------------------------------------------------------------------
# Closed-form linear-wealth example


def example1_spec(R: float = 0.05, omega: float = 0.2, theta: float = 0.03, x0: float = 1.0) -> ProblemSpec:
    return template_linear_wealth(theta, "ln(c)", repr(float(R)), repr(float(omega)), x0)


def closed_form_example1(R: float = 0.05, omega: float = 0.2, theta: float = 0.03, x0: float = 1.0,
                         grid=20_000, c0: float | None = None) -> tuple[Trajectory, MultiplierPath]:
    """Log utility with ``f = R x + omega``: ``c = c0 exp((R - theta) t)`` and

    ``x = (c0/theta) e^{(R-theta)t} + (x0 + omega/R - c0/theta) e^{Rt} - omega/R``.

    ``c0`` defaults to ``theta (x0 + omega/R)``, which removes the explosive
    term. ``grid`` is either a node count on ``[0, 600]`` or the nodes.
    """
    if not (R > 0 and theta > 0):
        raise VerifyError("R and theta must be positive")
    if omega < 0 or x0 < 0:
        raise VerifyError("omega and x0 must be nonnegative")
    t = np.linspace(0.0, 600.0, int(grid)) if np.isscalar(grid) else np.asarray(grid, dtype=float)
    if c0 is None:
        c0 = theta * (x0 + omega / R)
        explosive = 0.0  # vanishes identically; rounding would be amplified by exp(R t)
    else:
        explosive = x0 + omega / R - c0 / theta
    if not c0 > 0:
        raise VerifyError("consumption is identically zero (x0 = omega = 0): not an interior path")
    c = c0 * np.exp((R - theta) * t)
    x = (c0 / theta) * np.exp((R - theta) * t) + explosive * np.exp(R * t) - omega / R
    lam = np.exp(-theta * t) / c
    traj = Trajectory(t, x, c, None, math.nan, lam)
    return traj, MultiplierPath(t, lam)
