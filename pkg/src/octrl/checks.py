"""Sampled checks of the standing assumptions and of the scaling conditions.

Every check samples a compact box and returns a :class:`CheckRecord` whose
``margin`` is the worst signed slack found (negative means violated) together
with the point where it occurred. Sampling can only falsify or corroborate,
so a witness is always reported, passing or not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import Compiled, DomainError, ExprError
from .problem import AdmissiblePath, ProblemSpec

DEFAULT_BOX = (1e-2, 1e2)
DEFAULT_N = 64


class CheckError(ValueError):
    pass


@dataclass(frozen=True)
class ScalingCertificate:
    theta_star: float
    theta_star0: float
    lambda_bar: float

    def __post_init__(self):
        if not 0.0 < self.lambda_bar < 1.0:
            raise CheckError("lambda_bar must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"theta_star": self.theta_star, "theta_star0": self.theta_star0,
                "lambda_bar": self.lambda_bar}


@dataclass
class CheckRecord:
    name: str
    passed: bool
    margin: float
    witness: dict
    samples_used: int
    tol: float = 0.0
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pass": self.passed,
            "worst_witness": {"point": _clean(self.witness), "margin": _num(self.margin)},
            "samples_used": self.samples_used,
            "tol": self.tol,
            "detail": _clean(self.detail),
        }


@dataclass
class CheckReport:
    records: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def failures(self) -> list:
        return [r for r in self.records if not r.passed]

    def __getitem__(self, name: str) -> CheckRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"pass": self.passed, "checks": [r.to_dict() for r in self.records]}


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def _clean(d):
    if isinstance(d, dict):
        return {k: _clean(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_clean(v) for v in d]
    if isinstance(d, (bool, np.bool_)):
        return bool(d)
    if isinstance(d, (int, np.integer)):
        return int(d)
    if isinstance(d, (float, np.floating)):
        return _num(d)
    return d


def log_grid(box=DEFAULT_BOX, n: int = DEFAULT_N) -> np.ndarray:
    lo, hi = box
    if not 0 < lo < hi:
        raise CheckError("sample box must lie in the positive orthant")
    return np.geomspace(lo, hi, n)


def _record(name, margins, points, tol, n, detail=None) -> CheckRecord:
    margins = np.asarray(margins, dtype=float)
    bad = np.where(np.isnan(margins), -np.inf, margins)
    k = int(np.argmin(bad))
    return CheckRecord(name, bool(bad[k] >= -tol), float(bad[k]), points(k), n, tol, detail or {})


# ---------------------------------------------------------------------------
# Monotonicity and finiteness


def check_basic(s: ProblemSpec, sample_box=DEFAULT_BOX, n_samples: int = DEFAULT_N,
                t: float | None = None) -> CheckRecord:
    """``u_c > 0``, ``u_x >= 0`` and finite ``f, f_x`` on a log-spaced box."""
    t = s.t0 if t is None else t
    cs = log_grid(sample_box, n_samples)
    xs = cs if s.u.depends_on("x") else cs[:1]
    margin = np.empty((len(cs), len(xs)))
    u_c_min = math.inf
    first = None
    for i, c in enumerate(cs):
        for j, x in enumerate(xs):
            try:
                u = s.u_fast.jet(c, x, t)
            except ExprError:
                margin[i, j] = -math.inf
                continue
            u_c_min = min(u_c_min, u[1])
            # strict positivity of u_c: a zero counts as a violation
            m = min(u[1] if u[1] > 0 else min(u[1], -1e-300), u[2])
            margin[i, j] = m
            if m < 0 and first is None:
                first = {"c": c, "x": x, "t": t, "margin": m}
    f_bad = None
    for x in cs:
        try:
            fj = s.f_fast.jet(0.0, x, t)
        except ExprError:
            fj = (math.nan,) * 3
        if not (math.isfinite(fj[0]) and math.isfinite(fj[2])):
            f_bad = {"x": x, "t": t}
            break
    k = np.unravel_index(int(np.argmin(np.where(np.isnan(margin), -np.inf, margin))), margin.shape)
    worst = float(margin[k])
    passed = worst >= 0 and f_bad is None
    detail = {"min_u_c": u_c_min, "first_violation": first, "f_nonfinite_at": f_bad}
    return CheckRecord("basic", bool(passed), worst if f_bad is None else -math.inf,
                       {"c": cs[k[0]], "x": xs[k[1]], "t": t}, margin.size + len(cs), 0.0, detail)


# ---------------------------------------------------------------------------
# Concavity


def _H(s, c, x, t, lam):
    return math.exp(-s.theta * t) * s.u_fast.value(c, x, t) + lam * (s.f_fast.value(0.0, x, t) - c)


def check_H_concavity(s: ProblemSpec, t_samples=None, lambda_samples=(0.0, 0.5, 1.0, 2.0),
                      point_pairs: int = 256, sample_box=DEFAULT_BOX, seed: int = 0,
                      tol: float = 1e-9) -> CheckRecord:
    """Midpoint concavity of ``H(x, c)`` and a 2x2 negative-semidefiniteness test.

    Only ``lam >= 0`` is sampled: the multiplier equals a discounted positive
    marginal utility along any interior optimum.
    """
    t_samples = (s.t0,) if t_samples is None else tuple(t_samples)
    lams = tuple(float(v) for v in lambda_samples)
    if any(v < 0 for v in lams):
        raise CheckError("multiplier samples must be nonnegative")
    rng = np.random.default_rng(seed)
    lo, hi = np.log(sample_box[0]), np.log(sample_box[1])
    pts = np.exp(rng.uniform(lo, hi, size=(point_pairs, 4)))
    margins, where = [], []
    for t in t_samples:
        for lam in lams:
            for c1, x1, c2, x2 in pts:
                try:
                    h1 = _H(s, c1, x1, t, lam)
                    h2 = _H(s, c2, x2, t, lam)
                    hm = _H(s, 0.5 * (c1 + c2), 0.5 * (x1 + x2), t, lam)
                except ExprError as exc:
                    raise DomainError(f"H undefined while sampling: {exc}") from None
                scale = 1.0 + abs(h1) + abs(h2)
                margins.append((hm - 0.5 * (h1 + h2)) / scale)
                where.append(("midpoint", t, lam, (c1, x1), (c2, x2)))
            for c, x in pts[:, :2]:
                disc = math.exp(-s.theta * t)
                u = s.u_fast.jet(c, x, t)
                f = s.f_fast.jet(0.0, x, t)
                a = disc * u[4]
                b = disc * u[5]
                d = disc * u[7] + lam * f[7]
                # largest eigenvalue of [[a, b], [b, d]]
                top = 0.5 * (a + d) + math.hypot(0.5 * (a - d), b)
                scale = 1.0 + abs(a) + abs(d) + abs(b)
                margins.append(-top / scale)
                where.append(("hessian", t, lam, (c, x), None))

    def point(k):
        kind, t, lam, p, q = where[k]
        out = {"kind": kind, "t": t, "lambda": lam, "c": p[0], "x": p[1]}
        if q is not None:
            out.update({"c2": q[0], "x2": q[1]})
        return out

    return _record("H_concavity", margins, point, tol, len(margins))


def check_f_concavity_and_cone(s: ProblemSpec, t_samples=None, x_pairs: int = 256,
                               lambda_scale_samples=(0.1, 0.5, 0.9), sample_box=DEFAULT_BOX,
                               seed: int = 0, tol: float = 1e-9) -> CheckRecord:
    """Midpoint concavity of ``f(., t)``; the state cone is closed under scaling by construction.

    The scaled budget slack ``f(lam x, t) - lam f(x, t)`` is reported as a
    diagnostic; it is nonnegative whenever f is concave with ``f(0, t) >= 0``.
    """
    t_samples = (s.t0,) if t_samples is None else tuple(t_samples)
    rng = np.random.default_rng(seed)
    lo, hi = np.log(sample_box[0]), np.log(sample_box[1])
    xs = np.exp(rng.uniform(lo, hi, size=(x_pairs, 2)))
    margins, where = [], []
    scaled_min = math.inf
    for t in t_samples:
        fa = s.f_fast.values(0.0, xs[:, 0], t)
        fb = s.f_fast.values(0.0, xs[:, 1], t)
        fm = s.f_fast.values(0.0, xs.mean(axis=1), t)
        scale = 1.0 + np.abs(fa) + np.abs(fb)
        for k, m in enumerate((fm - 0.5 * (fa + fb)) / scale):
            margins.append(m)
            where.append((t, xs[k, 0], xs[k, 1]))
        for lam in lambda_scale_samples:
            if not 0.0 < lam < 1.0:
                raise CheckError("scale samples must lie in (0, 1)")
            gap = s.f_fast.values(0.0, lam * xs[:, 0], t) - lam * fa
            scaled_min = min(scaled_min, float(np.nanmin(gap / (1.0 + np.abs(fa)))))
    rec = _record("f_concavity", margins, lambda k: {"t": where[k][0], "x1": where[k][1],
                                                      "x2": where[k][2]}, tol, len(margins))
    rec.detail = {"cone": "pass by construction", "state_set": "R+ x R" if s.state_nonneg else "R x R",
                  "scaled_budget_min": scaled_min}
    return rec


# ---------------------------------------------------------------------------
# Scaling inequality


def builtin_certificate(family: str, lambda_bar: float, sigma: float | None = None) -> ScalingCertificate:
    """Certificates for ``ln(c)`` and ``c^(1-sigma)/(1-sigma)``.

    For log utility the quotient ``-ln(l)/(1-l)`` decreases in ``l``; for CRRA
    the quotient is ``u(c) (1 - l^(1-sigma))/(1-l)``, whose factor is monotone in
    ``l``. Both bounds are therefore attained at ``lambda_bar``.
    """
    lb = float(lambda_bar)
    if not 0.0 < lb < 1.0:
        raise CheckError("lambda_bar must lie in (0, 1)")
    family = family.lower()
    if family == "log":
        return ScalingCertificate(0.0, -math.log(lb) / (1.0 - lb), lb)
    if family == "crra":
        if sigma is None or not sigma > 0:
            raise CheckError("crra needs sigma > 0")
        if sigma == 1:
            raise CheckError("sigma = 1 is the log family")
        return ScalingCertificate((1.0 - lb ** (1.0 - sigma)) / (1.0 - lb), 0.0, lb)
    raise CheckError(f"unknown utility family {family!r} (expected log or crra)")


def lambda_grid(lambda_bar: float, n: int = 200) -> np.ndarray:
    """``n`` points strictly inside ``(lambda_bar, 1)``."""
    return lambda_bar + (1.0 - lambda_bar) * np.arange(1, n + 1) / (n + 1)


def _scaling_margin(fn: Compiled, var: str, pts, lams, cert, other=None):
    # margin = RHS - LHS over the (lambda, point) grid
    L = lams[:, None]
    P = np.asarray(pts, dtype=float)[None, :]
    if var == "c":
        y = other if other is not None else 1.0
        base = fn.values(P, y, 0.0)
        scaled = fn.values(L * P, L * y if other is not None else y, 0.0)
    else:
        base = fn.values(0.0, P, 0.0)
        scaled = fn.values(0.0, L * P, 0.0)
    lhs = (base - scaled) / (1.0 - L)
    return cert.theta_star * base + cert.theta_star0 - lhs


def check_scaling_inequality(s: ProblemSpec, cert: ScalingCertificate, lambda_grid_=None,
                             point_grid=None, tol: float = 1e-10, n: int = 200,
                             sample_box=DEFAULT_BOX) -> CheckRecord:
    """Worst ``theta* u + theta*0 - (u(z) - u(lam z))/(1 - lam)`` over the grids.

    Separable specs test the consumption and wealth parts separately. A joint
    ``u(c, x)`` is tested on the diagonal pairs of ``point_grid`` with both
    arguments scaled.
    """
    lams = lambda_grid(cert.lambda_bar, n) if lambda_grid_ is None else np.asarray(lambda_grid_, float)
    if np.any(lams <= cert.lambda_bar) or np.any(lams >= 1):
        raise CheckError("lambda grid must lie inside (lambda_bar, 1)")
    pts = np.geomspace(sample_box[0], sample_box[1], n) if point_grid is None else np.asarray(point_grid, float)
    if s.separable:
        parts = [("u", "c", Compiled(s.u_part), pts, None), ("v", "x", Compiled(s.v_part), pts, None)]
    else:
        parts = [("u", "c", s.u_fast, pts, pts if s.u.depends_on("x") else None)]
    return _scaling_record("scaling_inequality", parts, lams, cert, tol)


def _scaling_record(name, parts, lams, cert, tol, times=None):
    worst = None
    per_part = {}
    used = 0
    for label, var, fn, pts, other in parts:
        m = _scaling_margin(fn, var, pts, lams, cert, other)
        if np.any(np.isnan(m)):
            raise DomainError(f"{label} undefined on the sampled points")
        used += m.size
        i, j = np.unravel_index(int(np.argmin(m)), m.shape)
        per_part[label] = float(m[i, j])
        if worst is None or m[i, j] < worst[0]:
            point = {"part": label, "lambda": float(lams[i]), var: float(pts[j])}
            if times is not None:
                point["t"] = float(times[j])
            worst = (float(m[i, j]), point)
    detail = {"certificate": cert.to_dict(), "part_margins": per_part}
    return CheckRecord(name, bool(worst[0] >= -tol), worst[0], worst[1], used, tol, detail)


def check_scaling_on_path(s: ProblemSpec, cert: ScalingCertificate, p: AdmissiblePath,
                          tol: float = 1e-10, n: int = 200) -> CheckRecord:
    """The scaling inequality restricted to the consumption and wealth values of a path."""
    lams = lambda_grid(cert.lambda_bar, n)
    if s.separable:
        parts = [("u", "c", Compiled(s.u_part), p.c, None), ("v", "x", Compiled(s.v_part), p.x, None)]
    else:
        parts = [("u", "c", s.u_fast, p.c, p.x if s.u.depends_on("x") else None)]
    return _scaling_record("scaling_on_path", parts, lams, cert, tol, times=p.t)


def run_assumption_checks(s: ProblemSpec, cert: ScalingCertificate | None = None,
                          sample_box=DEFAULT_BOX, n_samples: int = DEFAULT_N) -> CheckReport:
    recs = [
        check_basic(s, sample_box, n_samples),
        check_H_concavity(s, sample_box=sample_box),
        check_f_concavity_and_cone(s, sample_box=sample_box),
    ]
    if cert is not None:
        recs.append(check_scaling_inequality(s, cert, sample_box=sample_box))
    return CheckReport(recs)


# ---------------------------------------------------------------------------
# Path-level diagnostics


def scaled_consumption(s: ProblemSpec, p: AdmissiblePath, lam: float) -> np.ndarray:
    """Implied consumption ``f(lam x, t) - lam x'`` of the scaled path."""
    if not 0.0 < lam < 1.0:
        raise CheckError("scale must lie in (0, 1)")
    return s.f_fast.values(0.0, lam * p.x, p.t) - lam * p.xdot()


def scaling_gap_W(s: ProblemSpec, p: AdmissiblePath, lambda_scale: float, t_index: int) -> float:
    """Discounted utility loss per unit of scaling at one node.

    ``W = exp(-theta t) (u(c, x) - u(f(lam x, t) - lam x', lam x)) / (1 - lam)``
    with ``c = f(x, t) - x'``. It is bounded by ``exp(-theta t) (theta* u + theta*0)``
    under a valid certificate; see :func:`scaling_gap_bound`.
    """
    lam = float(lambda_scale)
    if not 0.0 < lam < 1.0:
        raise CheckError("scale must lie in (0, 1)")
    k = int(t_index)
    t, x = float(p.t[k]), float(p.x[k])
    xd = float(p.xdot()[k])
    c = s.f_fast.value(0.0, x, t) - xd
    c_scaled = s.f_fast.value(0.0, lam * x, t) - lam * xd
    if not c_scaled > 0 or not c > 0:
        raise DomainError(f"scaled consumption {c_scaled!r} is not positive at t={t!r}")
    disc = math.exp(-s.theta * t)
    return disc * (s.u_fast.value(c, x, t) - s.u_fast.value(c_scaled, lam * x, t)) / (1.0 - lam)


def scaling_gap_bound(s: ProblemSpec, p: AdmissiblePath, cert: ScalingCertificate, t_index: int) -> float:
    k = int(t_index)
    t, x = float(p.t[k]), float(p.x[k])
    c = s.f_fast.value(0.0, x, t) - float(p.xdot()[k])
    return math.exp(-s.theta * t) * (cert.theta_star * s.u_fast.value(c, x, t) + cert.theta_star0)


@dataclass
class TailEstimate:
    lower: float
    upper: float
    trapezoid: float
    tail_bound: float
    growth_rate: float
    diverges: bool

    def __iter__(self):
        yield self.lower
        yield self.upper

    @property
    def value(self) -> float:
        """Trapezoid plus the tail extrapolated at the fitted rate."""
        if self.diverges:
            return math.nan
        return self.upper if self.lower == self.trapezoid else self.lower

    def to_dict(self) -> dict:
        return _clean({"lower": self.lower, "upper": self.upper, "trapezoid": self.trapezoid,
                       "tail_bound": self.tail_bound, "growth_rate": self.growth_rate,
                       "diverges": self.diverges})


def discounted_utility(s: ProblemSpec, p: AdmissiblePath) -> np.ndarray:
    u = s.u_fast.values(p.c, p.x, p.t)
    return np.exp(-s.theta * p.t) * u


def tail_integral_estimate(s: ProblemSpec, p: AdmissiblePath, tail_fraction: float = 0.2) -> TailEstimate:
    """Trapezoidal ``int exp(-theta t) u dt`` on the grid plus a geometric tail bound.

    The growth rate g of ``|u|`` comes from a log-linear fit over the last
    ``tail_fraction`` of the grid; the tail is bounded by
    ``exp(-(theta - g) T) |u(T)| / (theta - g)`` when ``g < theta``.
    """
    u = s.u_fast.values(p.c, p.x, p.t)
    if np.any(np.isnan(u)):
        raise DomainError("u undefined along the path")
    integrand = np.exp(-s.theta * p.t) * u
    trap = float(np.trapezoid(integrand, p.t)) if hasattr(np, "trapezoid") else float(np.trapz(integrand, p.t))
    n = len(p.t)
    k0 = min(int(n * (1.0 - tail_fraction)), n - 2)
    tt = p.t[k0:]
    au = np.abs(u[k0:])
    floor = max(float(np.max(au)) * 1e-300, 1e-300)
    g = float(np.polyfit(tt, np.log(np.maximum(au, floor)), 1)[0]) if len(tt) >= 2 else 0.0
    if g >= s.theta:
        return TailEstimate(-math.inf, math.inf, trap, math.inf, g, True)
    T = float(p.t[-1])
    # |u(t)| <= |u(T)| exp(g (t - T)) on the tail, per the fit
    bound = math.exp(-s.theta * T) * abs(float(u[-1])) / (s.theta - g)
    if u[-1] >= 0:
        lower, upper = trap, trap + bound
    else:
        lower, upper = trap - bound, trap
    return TailEstimate(lower, upper, trap, bound, g, False)
