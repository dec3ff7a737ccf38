"""Current-value pieces of the Hamiltonian and the first-order conditions.

With ``L = exp(-theta t) u(c, x)``, ``G = f(x, t) - c`` and ``H = L + lam*G``.
Differentiating ``exp(-theta t) u_c = lam`` along a path and substituting the
costate equation ``lam' = -exp(-theta t) u_x - lam f_x`` gives the Euler
equation used by the solver::

    u_cc * c' = (theta - f_x) * u_c - u_x - u_cx * x',    x' = f(x, t) - c

For ``u(c) + v(x)`` and ``f = R x + w`` this is
``c'/c = ((R - theta) u'(c) + v'(x)) / (-c u''(c))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .expr import DomainError
from .problem import AdmissiblePath, ProblemSpec


class SingularEuler(ArithmeticError):
    """u_cc vanishes, so the Euler equation cannot be solved for c'."""


class MultiplierError(ValueError):
    pass


@dataclass(frozen=True)
class HamiltonianEval:
    L: float
    G: float
    H: float
    dH_dc: float
    dH_dx: float


@dataclass(frozen=True, eq=False)
class MultiplierPath:
    t: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.shape != np.shape(self.t):
            raise ValueError("multiplier path must match the time grid")
        if not np.all(np.isfinite(lam)):
            raise ValueError("multiplier must be finite")
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "lam", lam)


@dataclass
class FocResiduals:
    r_c: np.ndarray
    r_costate: np.ndarray  # interior nodes only
    sup_c: float
    sup_costate: float
    fd_floor: float  # centered-difference error scale for lam'
    worst_t_c: float
    worst_t_costate: float

    def to_dict(self) -> dict:
        return {
            "sup_c": self.sup_c,
            "sup_costate": self.sup_costate,
            "fd_floor": self.fd_floor,
            "worst_t_c": self.worst_t_c,
            "worst_t_costate": self.worst_t_costate,
        }


def eval_LGH(s: ProblemSpec, x: float, c: float, t: float, lam: float) -> HamiltonianEval:
    u = s.u_fast.jet(c, x, t)
    f = s.f_fast.jet(0.0, x, t)
    disc = math.exp(-s.theta * t)
    L = disc * u[0]
    G = f[0] - c
    H = L + lam * G
    return HamiltonianEval(L, G, H, disc * u[1] - lam, disc * u[2] + lam * f[2])


def euler_rhs(s: ProblemSpec, x: float, c: float, t: float) -> tuple[float, float]:
    """``(x', c')`` of the canonical system at one point."""
    u = s.u_fast.jet(c, x, t)
    f = s.f_fast.jet(0.0, x, t)
    xdot = f[0] - c
    u_c, u_x, u_cc, u_cx = u[1], u[2], u[4], u[5]
    # curvature relative to the marginal utility, so the test is scale-free
    scale = (abs(u_c) + abs(u_cx * xdot)) / max(abs(c), 1e-300)
    if u_cc == 0 or abs(u_cc) < 1e-12 * scale:
        raise SingularEuler(f"u_cc = {u_cc!r} at c={c!r}, x={x!r}; Euler equation is singular")
    cdot = ((s.theta - f[2]) * u_c - u_x - u_cx * xdot) / u_cc
    return xdot, cdot


def multiplier_from_path(s: ProblemSpec, p: AdmissiblePath) -> MultiplierPath:
    """``lam = exp(-theta t) u_c`` at each node."""
    lam = np.empty(len(p))
    for k, (t, x, c) in enumerate(zip(p.t, p.x, p.c)):
        u_c = s.u_fast.jet(c, x, t)[1]
        if not u_c > 0:
            raise MultiplierError(f"u_c = {u_c!r} <= 0 at t={t!r}: marginal utility must be positive")
        lam[k] = math.exp(-s.theta * t) * u_c
    return MultiplierPath(p.t, lam)


def _centered(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    # interior nodes; exact-for-quadratics formula on nonuniform grids
    h0 = t[1:-1] - t[:-2]
    h1 = t[2:] - t[1:-1]
    return (h0**2 * y[2:] - h1**2 * y[:-2] + (h1**2 - h0**2) * y[1:-1]) / (h0 * h1 * (h0 + h1))


def _partials(s: ProblemSpec, p: AdmissiblePath):
    n = len(p)
    u_c = np.empty(n)
    u_x = np.empty(n)
    f_x = np.empty(n)
    for k in range(n):
        try:
            u = s.u_fast.jet(p.c[k], p.x[k], p.t[k])
            f = s.f_fast.jet(0.0, p.x[k], p.t[k])
        except DomainError as exc:
            raise DomainError(f"at t={p.t[k]!r}: {exc}") from None
        u_c[k], u_x[k], f_x[k] = u[1], u[2], f[2]
    return u_c, u_x, f_x


def foc_residuals(s: ProblemSpec, p: AdmissiblePath, m: MultiplierPath) -> FocResiduals:
    """Residuals of ``exp(-theta t) u_c = lam`` and of the costate equation."""
    if len(m.t) != len(p.t) or not np.allclose(m.t, p.t, rtol=0, atol=1e-12):
        raise ValueError("path and multiplier must share a grid")
    u_c, u_x, f_x = _partials(s, p)
    disc = np.exp(-s.theta * p.t)
    r_c = disc * u_c - m.lam
    lam_dot = _centered(m.lam, p.t)
    inner = slice(1, -1)
    r_cost = lam_dot + disc[inner] * u_x[inner] + m.lam[inner] * f_x[inner]
    kc = int(np.argmax(np.abs(r_c)))
    kk = int(np.argmax(np.abs(r_cost))) if len(r_cost) else 0
    return FocResiduals(
        r_c=r_c,
        r_costate=r_cost,
        sup_c=float(np.max(np.abs(r_c))),
        sup_costate=float(np.max(np.abs(r_cost))) if len(r_cost) else 0.0,
        fd_floor=fd_floor(m.lam, p.t),
        worst_t_c=float(p.t[kc]),
        worst_t_costate=float(p.t[1:-1][kk]) if len(r_cost) else math.nan,
    )


def fd_floor(y: np.ndarray, t: np.ndarray) -> float:
    """Error scale ``h^2/6 * max|y'''|`` of centered first differences."""
    if len(t) < 5:
        return 0.0
    h = float(np.max(np.diff(t)))
    d3 = np.abs(np.diff(y, 3)) / np.diff(t)[:-2] ** 3
    return h * h / 6.0 * float(np.max(d3))


def costate_threshold(m: MultiplierPath) -> float:
    """Grid-aware acceptance level for the costate residual."""
    h = float(np.max(np.diff(m.t)))
    if len(m.t) < 4:
        return 1e-6
    curv = float(np.max(np.abs(np.diff(m.lam, 2)))) / h**2 if len(m.t) > 2 else 0.0
    return max(1e-6, 10.0 * h * h * curv)


def costate_residual_all(s: ProblemSpec, p: AdmissiblePath, m: MultiplierPath) -> np.ndarray:
    """Costate residual at every node (one-sided second-order at the ends), for export."""
    u_c, u_x, f_x = _partials(s, p)
    disc = np.exp(-s.theta * p.t)
    lam_dot = np.gradient(m.lam, p.t, edge_order=2) if len(p) > 2 else np.gradient(m.lam, p.t)
    return lam_dot + disc * u_x + m.lam * f_x
