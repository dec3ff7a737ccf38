"""Dormand-Prince 5(4) integrator with dense output and event location.

Written for the two-dimensional canonical system, so states are plain
Python float lists; the stepping logic is dimension-agnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
# 5th minus embedded 4th order weights, including the FSAL stage
E = (-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40)
# continuous extension: y(t + s h) = y + h * sum_j K_j * poly_j(s)
P = (
    (1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799),
    (0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072),
    (0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632),
    (0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844),
    (0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423),
)


class StepSizeUnderflow(ArithmeticError):
    pass


@dataclass
class Event:
    """Terminal event fired when ``fn(t, y)`` changes sign in ``direction``.

    ``direction`` is -1 for decreasing crossings, +1 for increasing, 0 for any.
    """

    name: str
    fn: Callable[[float, Sequence[float]], float]
    direction: int = 0


@dataclass
class OdeResult:
    t: list
    y: list  # states at the requested output times reached
    t_final: float
    y_final: list
    event: str | None = None
    n_steps: int = 0
    n_rejected: int = 0
    log: list = field(default_factory=list)


class _Dense:
    __slots__ = ("t0", "h", "y0", "q")

    def __init__(self, t0, h, y0, K):
        n = len(y0)
        self.t0, self.h, self.y0 = t0, h, y0
        self.q = [[sum(K[j][i] * P[j][r] for j in range(7)) for r in range(4)] for i in range(n)]

    def __call__(self, t):
        s = (t - self.t0) / self.h
        s2 = s * s
        return [y + self.h * (q[0] * s + q[1] * s2 + q[2] * s2 * s + q[3] * s2 * s2)
                for y, q in zip(self.y0, self.q)]


def _initial_step(rhs, t0, y0, f0, rtol, atol, span):
    sc = [atol + rtol * abs(v) for v in y0]
    d0 = math.sqrt(sum((v / s) ** 2 for v, s in zip(y0, sc)) / len(y0))
    d1 = math.sqrt(sum((v / s) ** 2 for v, s in zip(f0, sc)) / len(y0))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h0, abs(span))


def dopri45(
    rhs: Callable[[float, list], list],
    t0: float,
    y0: Sequence[float],
    t_end: float,
    *,
    rtol: float = 1e-8,
    atol: float | None = None,
    t_eval: Sequence[float] = (),
    events: Sequence[Event] = (),
    max_steps: int = 1_000_000,
    retry_errors: tuple = (),
    halt_on_underflow: bool = False,
) -> OdeResult:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t_end`` (either direction).

    Exceptions listed in ``retry_errors`` raised by ``rhs`` inside a step are
    treated as a rejected step; if the step then collapses the integration
    halts with event ``"domain"``. With ``halt_on_underflow`` an error-driven
    step collapse halts with event ``"underflow"`` instead of raising.
    """
    if atol is None:
        atol = rtol * 1e-2
    direction = 1.0 if t_end >= t0 else -1.0
    t = float(t0)
    y = [float(v) for v in y0]
    f = list(rhs(t, y))
    h = _initial_step(rhs, t, y, f, rtol, atol, t_end - t0)
    out_t: list = []
    out_y: list = []
    t_eval = list(t_eval)
    k_eval = 0
    while k_eval < len(t_eval) and (t_eval[k_eval] - t) * direction <= 0:
        if t_eval[k_eval] == t:
            out_t.append(t)
            out_y.append(list(y))
        k_eval += 1
    g_prev = [ev.fn(t, y) for ev in events]
    n = len(y)
    steps = rejected = 0
    h_min_scale = 1e-13
    while (t_end - t) * direction > 0:
        if steps >= max_steps:
            raise StepSizeUnderflow(f"max_steps={max_steps} exceeded at t={t!r}")
        h = min(h, abs(t_end - t))
        hs = h * direction
        try:
            K = [f]
            for i in range(1, 6):
                yi = [y[m] + hs * sum(A[i][j] * K[j][m] for j in range(i)) for m in range(n)]
                K.append(list(rhs(t + C[i] * hs, yi)))
            y_new = [y[m] + hs * sum(B[j] * K[j][m] for j in range(6)) for m in range(n)]
            f_new = list(rhs(t + hs, y_new))
            K.append(f_new)
            bad = any(not math.isfinite(v) for v in y_new)
        except retry_errors:
            bad = True
        if bad:
            rejected += 1
            h *= 0.25
            if h < h_min_scale * max(1.0, abs(t)):
                return OdeResult(out_t, out_y, t, y, "domain", steps, rejected)
            continue
        err = 0.0
        for m in range(n):
            e = hs * sum(E[j] * K[j][m] for j in range(7))
            sc = atol + rtol * max(abs(y[m]), abs(y_new[m]))
            err += (e / sc) ** 2
        err = math.sqrt(err / n)
        if err > 1.0:
            rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)
            if h < h_min_scale * max(1.0, abs(t)):
                if halt_on_underflow:
                    return OdeResult(out_t, out_y, t, y, "underflow", steps, rejected)
                raise StepSizeUnderflow(f"step size underflow at t={t!r}")
            continue
        steps += 1
        dense = _Dense(t, hs, y, K)
        t_new = t + hs
        # event location on the dense output
        fired = None
        g_new = [ev.fn(t_new, y_new) for ev in events]
        for i, ev in enumerate(events):
            a, b = g_prev[i], g_new[i]
            crossed = (a > 0 and b <= 0) if ev.direction < 0 else (
                (a < 0 and b >= 0) if ev.direction > 0 else (a * b < 0 or (b == 0 and a != 0)))
            if crossed:
                tr = _locate(ev.fn, dense, t, t_new, a)
                if fired is None or (tr - fired[1]) * direction < 0:
                    fired = (ev.name, tr)
        t_stop = fired[1] if fired else t_new
        while k_eval < len(t_eval) and (t_eval[k_eval] - t_stop) * direction <= 0:
            te = t_eval[k_eval]
            out_t.append(te)
            out_y.append(y_new if te == t_new else dense(te))
            k_eval += 1
        if fired:
            return OdeResult(out_t, out_y, fired[1], dense(fired[1]), fired[0], steps, rejected)
        t, y, f, g_prev = t_new, y_new, f_new, g_new
        h *= min(10.0, 0.9 * err ** -0.2) if err > 0 else 10.0
    return OdeResult(out_t, out_y, t, y, None, steps, rejected)


def _locate(fn, dense, ta, tb, ga):
    """Root of ``fn(t, dense(t))`` in [ta, tb] by bisection with secant steps."""
    a, b = ta, tb
    fa = ga
    for _ in range(100):
        m = 0.5 * (a + b)
        fm = fn(m, dense(m))
        if (fm > 0) == (fa > 0) and fm != 0:
            a, fa = m, fm
        else:
            b = m
        if abs(b - a) <= 1e-14 * max(1.0, abs(b)):
            break
    return b
