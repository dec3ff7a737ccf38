"""Backward-induction oracle for the horizon-truncated, time-discretized problem.

With ``t_k = t0 + k dt`` and Euler-forward dynamics ``x_{k+1} = x_k + dt (f(x_k, t_k) - c_k)``,

    V_k(x) = max_{x'} exp(-theta t_k) dt u(f(x, t_k) - (x' - x)/dt, x) + V_{k+1}(x')

on a log-spaced grid, with ``V_{k+1}`` interpolated linearly between nodes.
The next state ``x'`` ranges continuously over the grid's span, so the
implied consumption is not quantized to grid spacing. Under concave u and f
the right-hand side is concave in ``x'``, which the golden-section kernel uses.

A pinned terminal state enters as the exact penalty
``V_N(x) = -P max(0, x_T - x)`` with ``x_T`` a grid node. A hard constraint
would need the reachable set to grow by less than one grid cell per step,
which linear interpolation cannot represent; for P above the terminal
shadow value of wealth the penalized optimum meets the pin exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .checks import discounted_utility
from .expr import DomainError
from .problem import AdmissiblePath, ProblemSpec

GOLDEN_ITERS = 64


class OracleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscretizedProblem:
    dt: float
    T: float
    x_grid: np.ndarray
    terminal: str | float = "free"  # "free" or the pinned terminal state
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise OracleError("time step must be positive")
        if not self.T > self.t0:
            raise OracleError("horizon must exceed the start time")
        g = np.asarray(self.x_grid, dtype=float)
        if g.ndim != 1 or len(g) < 16:
            raise OracleError("state grid needs at least 16 points")
        if np.any(np.diff(g) <= 0):
            raise OracleError("state grid must be strictly increasing")
        if self.terminal != "free":
            xT = float(self.terminal)
            if not g[0] <= xT <= g[-1]:
                raise OracleError(f"pinned terminal state {xT!r} outside the grid")
            if not np.any(g == xT):
                g = np.insert(g, np.searchsorted(g, xT), xT)
        object.__setattr__(self, "x_grid", g)

    @property
    def n_steps(self) -> int:
        return int(round((self.T - self.t0) / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def weights(self, theta: float) -> np.ndarray:
        """``exp(-theta t_k) dt`` for k = 0 .. N-1."""
        return np.exp(-theta * self.times[:-1]) * self.dt

    @classmethod
    def build(cls, s: ProblemSpec, T: float, dt: float, n_x: int, *, terminal="free",
              x_min: float | None = None, x_max: float | None = None,
              include=()) -> "DiscretizedProblem":
        """Log-spaced grid covering x0, the terminal pin and any ``include`` points."""
        pts = [s.x0] + [float(v) for v in include if v is not None]
        if terminal != "free":
            pts.append(float(terminal))
        pos = [p for p in pts if p > 0]
        if not pos:
            raise OracleError("need a positive reference state to place a log grid")
        lo = x_min if x_min is not None else 0.25 * min(pos)
        hi = x_max if x_max is not None else 4.0 * max(pos)
        if not 0 < lo < hi:
            raise OracleError("grid bounds must satisfy 0 < x_min < x_max")
        if any(p < lo or p > hi for p in pts):
            raise OracleError("grid must contain x0 and the terminal state")
        return cls(float(dt), float(T), np.geomspace(lo, hi, int(n_x)), terminal, s.t0)


@dataclass(eq=False)
class OracleSolution:
    problem: DiscretizedProblem
    V: np.ndarray  # (N+1, n_x)
    policy_c: np.ndarray  # (N, n_x)
    policy_next: np.ndarray  # (N, n_x)
    spec: ProblemSpec
    greedy: AdmissiblePath | None = None
    greedy_objective: float = math.nan
    greedy_discrete_objective: float = math.nan
    dead_nodes: int = 0
    pin_penalty: float = 0.0
    backend: str = field(default_factory=lambda: _backend.BACKEND)

    def value(self, k: int, x: float) -> float:
        from ._pycore import _interp

        return float(_interp(self.problem.x_grid, self.V[k], np.array([float(x)]))[0])

    def export_csv(self, path) -> None:
        """Value and policy tables, one row per (k, i): ``k,t,x_i,V,c_policy``."""
        d = self.problem
        times = d.times
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t", "x_i", "V", "c_policy"])
            for k in range(d.n_steps + 1):
                for i, x in enumerate(d.x_grid):
                    cp = self.policy_c[k, i] if k < d.n_steps else math.nan
                    w.writerow([k, repr(float(times[k])), repr(float(x)), repr(float(self.V[k, i])),
                                repr(float(cp))])


def _fast_u(s):
    return s.u_fast.ops, s.u_fast.args


def _default_penalty(s, d, k_mod) -> float:
    # well above the discounted marginal utility of consuming all of f at the horizon
    t = float(d.times[-2])
    f = np.asarray(s.f_fast.values(0.0, d.x_grid, t), dtype=float)
    grad = [abs(s.u_fast.jet(max(fi, 1e-12), x, t)[1]) for fi, x in zip(f, d.x_grid)]
    return 1e3 * math.exp(-s.theta * t) * (1.0 + max(grad))


def backward_induction(s: ProblemSpec, d: DiscretizedProblem, *, kernels=None,
                       c_floor: float = 1e-12, rollout: bool = True,
                       pin_penalty: float | None = None) -> OracleSolution:
    """Exact dynamic programming on the grid; nodes with no feasible action get ``-inf``."""
    k_mod = kernels or _backend.kernels
    ops, args = _fast_u(s)
    xg = d.x_grid
    n = len(xg)
    N = d.n_steps
    if N < 1:
        raise OracleError("horizon shorter than one time step")
    times = d.times
    w = d.weights(s.theta)
    V = np.empty((N + 1, n))
    C = np.full((N, n), np.nan)
    Q = np.full((N, n), np.nan)
    penalty = 0.0
    V[N] = 0.0
    if d.terminal != "free":
        penalty = pin_penalty if pin_penalty is not None else _default_penalty(s, d, k_mod)
        V[N] = -penalty * np.maximum(0.0, float(d.terminal) - xg)
    dead = 0
    for k in range(N - 1, -1, -1):
        t = float(times[k])
        f = np.asarray(s.f_fast.values(0.0, xg, t), dtype=float)
        finite = np.flatnonzero(np.isfinite(V[k + 1]))
        if len(finite) == 0:
            V[k] = -np.inf
            dead += n
            continue
        val, nxt, cons = k_mod.bellman_step(ops, args, xg, f, xg, V[k + 1], int(finite[0]),
                                            int(finite[-1]), float(w[k]), d.dt, t, c_floor,
                                            GOLDEN_ITERS)
        V[k] = np.asarray(val)
        Q[k] = np.asarray(nxt)
        C[k] = np.asarray(cons)
        dead += int(np.sum(~np.isfinite(V[k])))
    sol = OracleSolution(d, V, C, Q, s, dead_nodes=dead, pin_penalty=penalty)
    if rollout and d.x_grid[0] <= s.x0 <= d.x_grid[-1]:
        path, disc = _rollout(sol, s.x0, k_mod, c_floor)
        sol.greedy = path
        sol.greedy_discrete_objective = disc
        sol.greedy_objective = truncated_objective(s, path)
    return sol


def _rollout(sol: OracleSolution, x0: float, k_mod, c_floor: float):
    s, d = sol.spec, sol.problem
    ops, args = _fast_u(s)
    xg = d.x_grid
    N = d.n_steps
    times = d.times
    w = d.weights(s.theta)
    xs = np.empty(N + 1)
    cs = np.empty(N + 1)
    xs[0] = x0
    total = 0.0
    for k in range(N):
        t = float(times[k])
        x = np.array([xs[k]])
        f = np.asarray(s.f_fast.values(0.0, x, t), dtype=float)
        finite = np.flatnonzero(np.isfinite(sol.V[k + 1]))
        if len(finite) == 0:
            raise OracleError(f"no feasible continuation at step {k}")
        val, nxt, cons = k_mod.bellman_step(ops, args, x, f, xg, sol.V[k + 1], int(finite[0]),
                                            int(finite[-1]), float(w[k]), d.dt, t, c_floor,
                                            GOLDEN_ITERS)
        if not math.isfinite(float(val[0])):
            raise OracleError(f"no feasible action from x={xs[k]!r} at step {k}")
        q, c = float(nxt[0]), float(cons[0])
        total += w[k] * float(np.asarray(k_mod.values(ops, args, c, xs[k], t)))
        xs[k + 1] = q
        cs[k] = c
    # the last node has no action of its own; carry the final consumption forward
    cs[N] = cs[N - 1]
    return AdmissiblePath(times, xs, cs), float(total)


def oracle_path(sol: OracleSolution, x0: float, kernels=None, c_floor: float = 1e-12) -> AdmissiblePath:
    """Greedy rollout against the value table, re-maximizing at each off-grid state."""
    g = sol.problem.x_grid
    if not g[0] <= x0 <= g[-1]:
        raise OracleError(f"x0={x0!r} outside the oracle grid [{g[0]!r}, {g[-1]!r}]")
    path, _ = _rollout(sol, float(x0), kernels or _backend.kernels, c_floor)
    return path


def oracle_tolerance(s: ProblemSpec, p: AdmissiblePath) -> float:
    """Feasibility tolerance matching Euler-forward dynamics read by centered differences.

    The budget residual of such a path at node k is
    ``((c_k - c_{k-1}) - (f_k - f_{k-1}))/2``, so the tolerance scales with the
    largest one-step change of c and f.
    """
    f = s.f_fast.values(0.0, p.x, p.t)
    jump = float(np.max(np.abs(np.diff(p.c)) + np.abs(np.diff(f))))
    return 1e-6 * (1.0 + float(np.max(np.abs(f)))) + jump


def truncated_objective(s: ProblemSpec, p: AdmissiblePath, T: float | None = None) -> float:
    """Trapezoidal ``int exp(-theta t) u(c, x) dt`` over the path grid up to T."""
    q = p if T is None else p.truncate(T)
    y = discounted_utility(s, q)
    if np.any(np.isnan(y)):
        raise DomainError("u undefined along the path")
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(q.t)))


def _resample(p: AdmissiblePath, t: np.ndarray) -> AdmissiblePath:
    return AdmissiblePath(t, np.interp(t, p.t, p.x), np.interp(t, p.t, p.c))


def compare_objectives(s: ProblemSpec, a: AdmissiblePath, b: AdmissiblePath,
                       T: float | None = None) -> tuple[float, float, float]:
    """``(J_a, J_b, J_a - J_b)`` on the union of both grids over ``[t0, T]``."""
    t0 = max(float(a.t[0]), float(b.t[0]))
    t_end = min(float(a.t[-1]), float(b.t[-1])) if T is None else float(T)
    if t_end > a.t[-1] + 1e-9 or t_end > b.t[-1] + 1e-9:
        raise OracleError("both paths must cover [t0, T]")
    grid = np.union1d(a.t, b.t)
    grid = grid[(grid >= t0 - 1e-12) & (grid <= t_end + 1e-12)]
    if grid[-1] < t_end - 1e-12:
        grid = np.append(grid, t_end)
    ja = truncated_objective(s, _resample(a, grid))
    jb = truncated_objective(s, _resample(b, grid))
    return ja, jb, ja - jb
