"""Candidate optimal paths: steady states, saddle structure, shooting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import DomainError, NonFiniteResult
from .hamiltonian import MultiplierPath, SingularEuler, euler_rhs, multiplier_from_path
from .ode import Event, StepSizeUnderflow, dopri45
from .problem import AdmissiblePath, ProblemSpec

OVERFLOW = 1e12
HARD_LIMIT = 1e200


class SolverError(ArithmeticError):
    pass


class NoSteadyState(SolverError):
    pass


class ShootingError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory(AdmissiblePath):
    event: str | None = None
    t_event: float = math.nan
    lam: np.ndarray | None = None
    n_steps: int = 0

    def with_multiplier(self, m: MultiplierPath) -> "Trajectory":
        return Trajectory(self.t, self.x, self.c, self.event, self.t_event, m.lam, self.n_steps)

    def multiplier(self) -> MultiplierPath:
        if self.lam is None:
            raise ValueError("trajectory carries no multiplier")
        return MultiplierPath(self.t, self.lam)


@dataclass
class SteadyState:
    x_star: float
    c_star: float
    m_star: float  # u_c at the rest point
    residuals: tuple

    def to_dict(self) -> dict:
        return {"x_star": self.x_star, "c_star": self.c_star, "m_star": self.m_star,
                "residuals": list(self.residuals)}


@dataclass
class LinearizationReport:
    jacobian: np.ndarray
    eigenvalues: tuple
    saddle: bool
    stable_eigvec: np.ndarray | None
    degenerate: bool = False

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.jacobian))

    def to_dict(self) -> dict:
        return {
            "jacobian": self.jacobian.tolist(),
            "eigenvalues": [[complex(v).real, complex(v).imag] for v in self.eigenvalues],
            "det": self.det,
            "saddle": self.saddle,
            "degenerate": self.degenerate,
            "stable_eigvec": None if self.stable_eigvec is None else self.stable_eigvec.tolist(),
        }


@dataclass
class ShootingConfig:
    T: float | None = None
    tol_c0: float = 1e-10
    tol_tvc: float = 1e-6
    rtol: float = 1e-10
    n_out: int = 6001
    bracket: tuple | None = None
    x_bracket: tuple | None = None
    max_bisect: int = 200
    max_segments: int = 40

    def horizon(self, theta: float) -> float:
        if self.T is not None:
            return float(self.T)
        # long enough for exp(-theta T)/theta to fall below tol_tvc
        need = math.log(1.0 / (theta * self.tol_tvc)) / theta
        return max(50.0, 10.0 / theta, 1.05 * need)


@dataclass
class ShootingResult:
    c0: float
    trajectory: Trajectory
    tvc_proxy_at_T: float
    bracket_width: float
    classification_log: list = field(default_factory=list)
    verified: bool = False
    steady_state: SteadyState | None = None
    segments: int = 1

    def to_dict(self) -> dict:
        return {
            "c0": self.c0,
            "tvc_proxy_at_T": self.tvc_proxy_at_T,
            "bracket_width": self.bracket_width,
            "verified": self.verified,
            "segments": self.segments,
            "T": float(self.trajectory.t[-1]),
            "n_nodes": len(self.trajectory),
            "n_classifications": len(self.classification_log),
            "steady_state": None if self.steady_state is None else self.steady_state.to_dict(),
        }


# ---------------------------------------------------------------------------
# Steady state


def stationarity_residual(s: ProblemSpec, x: float) -> float:
    """``(theta - f_x) u_c - u_x`` on the locus ``c = f(x)``."""
    f = s.f_fast.jet(0.0, x, 0.0)
    u = s.u_fast.jet(f[0], x, 0.0)
    return (s.theta - f[2]) * u[1] - u[2]


def _safe_residual(s, x):
    try:
        r = stationarity_residual(s, x)
    except (DomainError, NonFiniteResult):
        return math.nan
    return r if math.isfinite(r) else math.nan


def find_steady_state(s: ProblemSpec, x_bracket=None, tol: float = 1e-10) -> SteadyState:
    """Rest point of the canonical system by bisection plus secant polishing.

    Without a bracket, a log-spaced scan over [1e-6, 1e8] looks for the first
    strict sign change.
    """
    s = s.limit_spec()
    if x_bracket is None:
        xs = np.geomspace(1e-6, 1e8, 281)
        rs = [_safe_residual(s, float(v)) for v in xs]
        bracket = None
        for i in range(len(xs) - 1):
            a, b = rs[i], rs[i + 1]
            if math.isfinite(a) and math.isfinite(b) and a * b < 0:
                bracket = (float(xs[i]), float(xs[i + 1]))
                break
            # root exactly on a scan node
            if b == 0 and i + 2 < len(xs) and math.isfinite(a) and a * rs[i + 2] < 0:
                bracket = (float(xs[i]), float(xs[i + 2]))
                break
        if bracket is None:
            raise NoSteadyState("no sign change of the stationarity residual: no interior steady state")
    else:
        bracket = tuple(map(float, x_bracket))
    a, b = bracket
    ra, rb = _safe_residual(s, a), _safe_residual(s, b)
    if not (math.isfinite(ra) and math.isfinite(rb)) or ra * rb > 0 or ra == rb == 0:
        raise NoSteadyState(f"no sign change of the stationarity residual in [{a}, {b}]")
    if ra == 0 or rb == 0:
        a = b = a if ra == 0 else b
    for _ in range(200 if a < b else 0):
        m = 0.5 * (a + b)
        rm = _safe_residual(s, m)
        if rm == 0:
            a = b = m
            break
        if (rm > 0) == (ra > 0):
            a, ra = m, rm
        else:
            b, rb = m, rm
        if b - a <= 1e-13 * max(1.0, abs(m)):
            break
    x = 0.5 * (a + b)
    # secant polish
    x_prev, r_prev = a, ra
    for _ in range(5):
        r = _safe_residual(s, x)
        if r == 0 or r == r_prev or not math.isfinite(r):
            break
        x_next = x - r * (x - x_prev) / (r - r_prev)
        if not (min(bracket) <= x_next <= max(bracket)):
            break
        x_prev, r_prev, x = x, r, x_next
    c = s.f_fast.value(0.0, x, 0.0)
    xdot, cdot = euler_rhs(s, x, c, 0.0)
    m_star = s.u_fast.jet(c, x, 0.0)[1]
    res = (abs(xdot), abs(cdot))
    scale = max(1.0, abs(c), abs(x))
    if max(res) > 1e-8 * scale:
        raise NoSteadyState(f"steady state residual {res} too large")
    return SteadyState(float(x), float(c), float(m_star), res)


# ---------------------------------------------------------------------------
# Linearization


def eig2(J: np.ndarray) -> tuple:
    """Closed-form eigenvalues of a 2x2 matrix."""
    tr = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    disc = tr * tr / 4.0 - det
    if disc >= 0:
        r = math.sqrt(disc)
        # avoid cancellation for the smaller root
        big = tr / 2.0 + math.copysign(r, tr) if tr != 0 else r
        small = det / big if big != 0 else tr / 2.0 - r
        return tuple(sorted((big, small)))
    r = math.sqrt(-disc)
    return (complex(tr / 2.0, -r), complex(tr / 2.0, r))


def linearize_matrix(J) -> LinearizationReport:
    J = np.asarray(J, dtype=float)
    ev = eig2(J)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    scale = max(1.0, float(np.max(np.abs(J))))
    tr = J[0, 0] + J[1, 1]
    degenerate = abs(det) <= 1e-14 * scale**2 or abs(tr * tr / 4.0 - det) <= 1e-14 * scale**2
    saddle = det < 0 and not degenerate
    vec = None
    if saddle:
        mu = min(ev)
        cands = [np.array([J[0, 1], mu - J[0, 0]]), np.array([mu - J[1, 1], J[1, 0]])]
        v = max(cands, key=lambda a: float(np.linalg.norm(a)))
        v = v / np.linalg.norm(v)
        if v[0] < 0 or (v[0] == 0 and v[1] < 0):
            v = -v
        vec = v
    return LinearizationReport(J, ev, bool(saddle), vec, bool(degenerate))


def jacobian(s: ProblemSpec, x: float, c: float, t: float = 0.0) -> np.ndarray:
    """Central differences of the canonical system in (x, c)."""
    J = np.empty((2, 2))
    for j, base in enumerate((x, c)):
        h = 1e-6 * max(1.0, abs(base))
        plus = [x, c]
        minus = [x, c]
        plus[j] += h
        minus[j] -= h
        fp = euler_rhs(s, plus[0], plus[1], t)
        fm = euler_rhs(s, minus[0], minus[1], t)
        J[0, j] = (fp[0] - fm[0]) / (2 * h)
        J[1, j] = (fp[1] - fm[1]) / (2 * h)
    return J


def linearize(s: ProblemSpec, ss: SteadyState) -> LinearizationReport:
    s = s.limit_spec()
    return linearize_matrix(jacobian(s, ss.x_star, ss.c_star))


# ---------------------------------------------------------------------------
# Integration


_RETRY = (DomainError, NonFiniteResult, SingularEuler, OverflowError, ZeroDivisionError)


def _system(s: ProblemSpec, sign: float = 1.0):
    def rhs(t, y):
        xd, cd = euler_rhs(s, y[0], y[1], t)
        return (sign * xd, sign * cd)

    return rhs


def _standard_events(theta, t0, x0, c0, extra=()):
    # The guard applies to discounted magnitudes relative to the start, so a
    # path that grows more slowly than the discount rate never trips it.
    gx = OVERFLOW * max(1.0, abs(x0))
    gc = OVERFLOW * max(1.0, abs(c0))

    def guard(limit, i):
        return lambda t, y: min(limit - abs(y[i]) * math.exp(-theta * (t - t0)), HARD_LIMIT - abs(y[i]))

    return [
        Event("x<=0", lambda t, y: y[0], -1),
        Event("c<=0", lambda t, y: y[1], -1),
        Event("overflow_x", guard(gx, 0), -1),
        Event("overflow_c", guard(gc, 1), -1),
        *extra,
    ]


def _run(s, x0, c0, t0, t_end, rtol, t_eval=(), extra_events=(), sign=1.0):
    events = _standard_events(s.theta, t0, x0, c0, extra_events)
    res = dopri45(_system(s, sign), t0, (x0, c0), t_end, rtol=rtol, t_eval=t_eval,
                  events=events, retry_errors=_RETRY,
                  halt_on_underflow=True)
    if res.event in ("domain", "underflow"):
        x_end = res.y_final[0]
        if x_end <= 1e-6 * max(1.0, abs(x0)):
            res.event = "x<=0"
        elif res.y_final[1] <= 1e-6 * max(1.0, abs(c0)):
            res.event = "c<=0"
    return res


def integrate(s: ProblemSpec, x0: float, c0: float, t_span, tol: float = 1e-8,
              n_out: int = 1001, t_eval=None) -> Trajectory:
    """Adaptive Dormand-Prince integration sampled on a uniform reporting grid.

    Halts early (recorded in ``event``) when x or c reaches zero or exceeds
    the overflow guard.
    """
    t0, t1 = map(float, t_span)
    if not (x0 > 0 or (x0 == 0 and not s.state_nonneg)) or not c0 > 0:
        if not c0 > 0:
            raise DomainError("initial consumption must be positive")
    grid = np.linspace(t0, t1, n_out) if t_eval is None else np.asarray(t_eval, dtype=float)
    try:
        res = _run(s, x0, c0, t0, t1, tol, t_eval=grid)
    except StepSizeUnderflow as exc:
        raise SolverError(str(exc)) from exc
    ts = np.array(res.t)
    ys = np.array(res.y).reshape(-1, 2)
    if res.event is not None and (len(ts) == 0 or ts[-1] < res.t_final):
        ts = np.append(ts, res.t_final)
        ys = np.vstack([ys, res.y_final])
    if len(ts) < 2:
        ts = np.array([t0, res.t_final]) if res.t_final > t0 else np.array([t0, t0 + 1e-300])
        ys = np.array([[x0, c0], res.y_final])
    return Trajectory(ts, ys[:, 0], ys[:, 1], res.event,
                      res.t_final if res.event else math.nan, None, res.n_steps)


# ---------------------------------------------------------------------------
# Shooting


def _classify(s, x0, c0, t0, t_end, rtol, ss):
    extra = ()
    if ss is not None and x0 < ss.x_star:
        extra = (Event("x>x*", lambda t, y, xs=ss.x_star: y[0] - xs, 1),)
    try:
        res = _run(s, x0, c0, t0, t_end, rtol, extra_events=extra)
    except StepSizeUnderflow:
        return "UNCLASSIFIED", t0
    ev = res.event
    if ev == "x<=0":
        return "HIGH", res.t_final
    if ev in ("c<=0", "x>x*"):
        return "LOW", res.t_final
    if ss is not None and ev in ("overflow_x", "overflow_c"):
        return ("LOW" if ev == "overflow_x" else "HIGH"), res.t_final
    if ev not in (None, "overflow_x", "overflow_c"):
        return "UNCLASSIFIED", res.t_final
    x, c = res.y_final
    if ss is not None:
        return ("LOW" if x > ss.x_star else "HIGH"), res.t_final
    # Without a steady state the saddle path can outgrow the discount rate, so
    # size alone says nothing. Under-accumulating runs have a falling
    # consumption share c/x, over-consuming runs a rising one.
    try:
        xdot, cdot = euler_rhs(s, x, c, res.t_final)
    except ArithmeticError:
        return "UNCLASSIFIED", res.t_final
    return ("LOW" if xdot * c > cdot * x else "HIGH"), res.t_final


def _bisect(s, x0, t0, t_end, lo, hi, cfg, ss, log):
    for _ in range(cfg.max_bisect):
        if hi - lo <= cfg.tol_c0:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        label, t_stop = _classify(s, x0, mid, t0, t_end, cfg.rtol, ss)
        log.append({"t0": t0, "c0": mid, "class": label, "t_stop": t_stop})
        if label == "HIGH":
            hi = mid
        elif label == "LOW":
            lo = mid
        else:
            raise ShootingError(f"run with c0={mid!r} could not be classified")
    return lo, hi


def _check_bracket(s, x0, lo, hi, t0, t_end, cfg, ss, log):
    for _ in range(8):
        lab_lo, _ = _classify(s, x0, lo, t0, t_end, cfg.rtol, ss)
        lab_hi, _ = _classify(s, x0, hi, t0, t_end, cfg.rtol, ss)
        log.append({"t0": t0, "c0": lo, "class": lab_lo, "bracket": True})
        log.append({"t0": t0, "c0": hi, "class": lab_hi, "bracket": True})
        if lab_lo == "LOW" and lab_hi == "HIGH":
            return lo, hi
        if lab_lo != "LOW":
            lo *= 0.1
        if lab_hi != "HIGH":
            hi *= 4.0
    raise ShootingError(f"bracket classification failure: c0 in ({lo!r}, {hi!r})")


def _default_bracket(s, x0, t0):
    f0 = s.f_fast.value(0.0, x0, t0)
    hi = max(2.0 * abs(f0), abs(f0) + abs(x0), 1e-3)
    return 1e-6 * hi, hi


def shoot(s: ProblemSpec, config: ShootingConfig | None = None) -> ShootingResult:
    """Bisection on c(0) so the run neither exhausts wealth nor over-accumulates.

    Even the converged c(0) departs from the saddle path after a while, since
    the unstable mode amplifies any rounding. The reported trajectory is
    therefore assembled in segments: once the runs at the two bracket ends
    separate, a new shooting problem is started from the current state with
    the same look-ahead horizon.
    """
    cfg = config or ShootingConfig()
    T = cfg.horizon(s.theta)
    if not s.autonomous and s.f_limit is None:
        raise ShootingError("time-varying f requires an f_limit for shooting")
    lim = s.limit_spec()
    ss = None
    try:
        ss = find_steady_state(lim, cfg.x_bracket)
    except NoSteadyState:
        if lim.u.depends_on("x"):
            raise ShootingError(
                "unclassifiable: utility depends on wealth and the phase plane has no steady state"
            ) from None
    horizon = T - s.t0
    grid = np.linspace(s.t0, T, cfg.n_out)
    log: list = []
    t_a, x_a = s.t0, s.x0
    lo, hi = cfg.bracket if cfg.bracket else _default_bracket(s, x_a, t_a)
    lo, hi = _check_bracket(s, x_a, lo, hi, t_a, t_a + horizon, cfg, ss, log)
    lo, hi = _bisect(s, x_a, t_a, t_a + horizon, lo, hi, cfg, ss, log)
    c0 = 0.5 * (lo + hi)
    width0 = hi - lo
    ts, xs, cs = [], [], []
    segments = 0
    while True:
        segments += 1
        if segments > cfg.max_segments:
            raise ShootingError("too many re-anchored segments")
        mid = 0.5 * (lo + hi)
        todo = grid[grid >= t_a - 1e-12]
        if segments > 1:
            todo = todo[todo > t_a + 1e-12]
        run_m = _run(s, x_a, mid, t_a, T, cfg.rtol, t_eval=todo)
        run_l = _run(s, x_a, lo, t_a, T, cfg.rtol, t_eval=todo)
        run_h = _run(s, x_a, hi, t_a, T, cfg.rtol, t_eval=todo)
        n = min(len(run_m.t), len(run_l.t), len(run_h.t))
        split = n
        for k in range(n):
            ym, yl, yh = run_m.y[k], run_l.y[k], run_h.y[k]
            gap = max(abs(yl[0] - yh[0]) / (1 + abs(ym[0])), abs(yl[1] - yh[1]) / (1 + abs(ym[1])))
            if gap > 1e-7:
                split = k
                break
        if split == len(todo) and run_m.event is None:
            ts += run_m.t
            xs += [y[0] for y in run_m.y]
            cs += [y[1] for y in run_m.y]
            break
        # keep the agreeing part, restart from its last node
        keep = max(1, (split * 3) // 4)
        if keep >= len(run_m.t):
            keep = len(run_m.t)
        ts += run_m.t[:keep]
        xs += [y[0] for y in run_m.y[:keep]]
        cs += [y[1] for y in run_m.y[:keep]]
        t_a = run_m.t[keep - 1]
        x_a, c_a = run_m.y[keep - 1]
        lo, hi = _check_bracket(s, x_a, c_a * (1 - 1e-4), c_a * (1 + 1e-4), t_a, t_a + horizon,
                                cfg, ss, log)
        lo, hi = _bisect(s, x_a, t_a, t_a + horizon, lo, hi, cfg, ss, log)
        if t_a >= T:
            break
    traj = Trajectory(np.array(ts), np.array(xs), np.array(cs), None, math.nan, None)
    m = multiplier_from_path(s, traj)
    traj = traj.with_multiplier(m)
    proxy = float(m.lam[-1] * traj.x[-1])
    return ShootingResult(c0, traj, proxy, width0, log, proxy <= cfg.tol_tvc, ss, segments)


def tvc_proxy(s: ProblemSpec, traj: AdmissiblePath) -> np.ndarray:
    """``exp(-theta t) u_c(c, x) x`` along a path."""
    m = multiplier_from_path(s, traj)
    return m.lam * traj.x


# ---------------------------------------------------------------------------
# Backward saddle-path integration


def saddle_path_backward(s: ProblemSpec, ss: SteadyState, eps: float, t_back: float,
                         rtol: float = 1e-10, n_out: int = 4001) -> Trajectory:
    """Trace the stable manifold by integrating the reversed system away from the rest point.

    Starts at ``(x*, c*) - eps * v`` with ``v`` the stable eigenvector (x
    component positive), so ``eps > 0`` follows the branch below ``x*``.
    The result is returned in forward time, ending near the steady state.
    """
    lim = s.limit_spec()
    lin = linearize(lim, ss)
    if not lin.saddle:
        raise SolverError("steady state is not a saddle")
    v = lin.stable_eigvec
    x_start = ss.x_star - eps * v[0]
    c_start = ss.c_star - eps * v[1]
    if eps == 0:
        t = np.linspace(0.0, t_back, n_out)
        return Trajectory(t, np.full(n_out, ss.x_star), np.full(n_out, ss.c_star))
    grid = np.linspace(0.0, t_back, n_out)
    res = _run(lim, x_start, c_start, 0.0, t_back, rtol, t_eval=grid, sign=-1.0)
    tau = np.array(res.t)
    ys = np.array(res.y).reshape(-1, 2)
    if len(tau) < 2:
        raise SolverError("backward integration stopped immediately")
    t_fwd = tau[-1] - tau[::-1]
    return Trajectory(t_fwd, ys[::-1, 0], ys[::-1, 1], res.event,
                      float(tau[-1] - res.t_final) if res.event else math.nan)


def implied_c(traj: AdmissiblePath, x0: float) -> float:
    """Consumption on a traced branch at the state ``x0`` (linear in x)."""
    x, c = traj.x, traj.c
    order = np.argsort(x)
    xs, cs = x[order], c[order]
    if not (xs[0] <= x0 <= xs[-1]):
        raise SolverError(f"x0={x0!r} not on the traced branch [{xs[0]!r}, {xs[-1]!r}]")
    return float(np.interp(x0, xs, cs))
