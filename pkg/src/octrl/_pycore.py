"""Pure-Python/numpy implementation of the kernels in ``_core.pyx``.

Same signatures and status codes; used when the extension is not built or
when ``OCTRL_BACKEND=python``.
"""

import math
import operator

import numpy as np

from .expr import (
    OP_ADD, OP_CONST, OP_DIV, OP_EXP, OP_LN, OP_MUL, OP_NEG, OP_POW, OP_POWI, OP_SUB, OP_VAR,
)

_ZERO = (0.0,) * 10


class _Domain(Exception):
    pass


def _chain(a, d0, d1, d2):
    # unrolled over the packed Hessian pairs (00, 01, 02, 11, 12, 22)
    g0, g1, g2 = a[1], a[2], a[3]
    return (d0, d1 * g0, d1 * g1, d1 * g2,
            d1 * a[4] + d2 * g0 * g0, d1 * a[5] + d2 * g0 * g1, d1 * a[6] + d2 * g0 * g2,
            d1 * a[7] + d2 * g1 * g1, d1 * a[8] + d2 * g1 * g2, d1 * a[9] + d2 * g2 * g2)


def _mul(a, b):
    a0, a1, a2, a3 = a[0], a[1], a[2], a[3]
    b0, b1, b2, b3 = b[0], b[1], b[2], b[3]
    return (a0 * b0, a0 * b1 + b0 * a1, a0 * b2 + b0 * a2, a0 * b3 + b0 * a3,
            a0 * b[4] + b0 * a[4] + 2.0 * a1 * b1,
            a0 * b[5] + b0 * a[5] + a1 * b2 + a2 * b1,
            a0 * b[6] + b0 * a[6] + a1 * b3 + a3 * b1,
            a0 * b[7] + b0 * a[7] + 2.0 * a2 * b2,
            a0 * b[8] + b0 * a[8] + a2 * b3 + a3 * b2,
            a0 * b[9] + b0 * a[9] + 2.0 * a3 * b3)


def _powi(a, m):
    y = a[0]
    if m == 0:
        return (1.0, *_ZERO[1:])
    if m == 1:
        return a
    if y == 0.0 and m < 0:
        raise _Domain
    return _chain(a, y**m, m * y ** (m - 1), m * (m - 1.0) * y ** (m - 2) if m != 2 else 2.0)


def _run_jet(ops, args, c, x, t):
    stack = []
    push = stack.append
    for op, arg in zip(ops, args):
        if op == OP_CONST:
            push((arg, *_ZERO[1:]))
        elif op == OP_VAR:
            k = int(arg)
            g = [0.0, 0.0, 0.0]
            g[k] = 1.0
            push(((c, x, t)[k], *g, *_ZERO[4:]))
        elif op == OP_NEG:
            stack[-1] = tuple(map(operator.neg, stack[-1]))
        elif op == OP_LN:
            a = stack[-1]
            if not a[0] > 0.0:
                raise _Domain
            stack[-1] = _chain(a, math.log(a[0]), 1.0 / a[0], -1.0 / (a[0] * a[0]))
        elif op == OP_EXP:
            e = math.exp(stack[-1][0])
            stack[-1] = _chain(stack[-1], e, e, e)
        elif op == OP_POWI:
            stack[-1] = _powi(stack[-1], int(arg))
        else:
            b = stack.pop()
            a = stack[-1]
            if op == OP_ADD:
                stack[-1] = tuple(map(operator.add, a, b))
            elif op == OP_SUB:
                stack[-1] = tuple(map(operator.sub, a, b))
            elif op == OP_MUL:
                stack[-1] = _mul(a, b)
            elif op == OP_DIV:
                y = b[0]
                if y == 0.0:
                    raise _Domain
                stack[-1] = _mul(a, _chain(b, 1.0 / y, -1.0 / (y * y), 2.0 / (y * y * y)))
            else:
                y, p = a[0], b[0]
                if not any(b[1:]):
                    if float(p).is_integer() and abs(p) < 1e15:
                        stack[-1] = _powi(a, int(p))
                        continue
                    if not y > 0.0:
                        raise _Domain
                    stack[-1] = _chain(a, y**p, p * y ** (p - 1.0), p * (p - 1.0) * y ** (p - 2.0))
                else:
                    if not y > 0.0:
                        raise _Domain
                    la = _chain(a, math.log(y), 1.0 / y, -1.0 / (y * y))
                    prod = _mul(la, b)
                    e = math.exp(prod[0])
                    stack[-1] = _chain(prod, e, e, e)
    return stack[0]


def jet(ops, args, c, x, t):
    try:
        out = _run_jet(ops.tolist(), args.tolist(), float(c), float(x), float(t))
    except (_Domain, ZeroDivisionError):
        return 1, _ZERO
    except OverflowError:
        return 2, _ZERO
    if not math.isfinite(sum(out)) and not all(math.isfinite(v) for v in out):
        return 2, tuple(out)
    return 0, tuple(out)


def values(ops, args, c, x, t):
    c, x, t = np.broadcast_arrays(np.asarray(c, dtype=float), np.asarray(x, dtype=float),
                                  np.asarray(t, dtype=float))
    env = (c, x, t)
    stack = []
    with np.errstate(all="ignore"):
        for op, arg in zip(ops.tolist(), args.tolist()):
            if op == OP_CONST:
                stack.append(np.full(c.shape, arg))
            elif op == OP_VAR:
                stack.append(env[int(arg)].astype(float, copy=True))
            elif op == OP_NEG:
                stack[-1] = -stack[-1]
            elif op == OP_LN:
                a = stack[-1]
                stack[-1] = np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), np.nan)
            elif op == OP_EXP:
                stack[-1] = np.exp(stack[-1])
            elif op == OP_POWI:
                a = stack[-1]
                m = int(arg)
                bad = (a == 0) & (m < 0)
                stack[-1] = np.where(bad, np.nan, np.power(np.where(bad, 1.0, a), float(m)))
            else:
                b = stack.pop()
                a = stack[-1]
                if op == OP_ADD:
                    r = a + b
                elif op == OP_SUB:
                    r = a - b
                elif op == OP_MUL:
                    r = a * b
                elif op == OP_DIV:
                    r = np.where(b != 0, a / np.where(b != 0, b, 1.0), np.nan)
                else:
                    integral = (b == np.floor(b)) & (np.abs(b) < 1e15)
                    ok = np.where(integral, ~((a == 0) & (b < 0)), a > 0)
                    r = np.where(ok, np.power(np.where(ok, a, 1.0), b), np.nan)
                stack[-1] = r
        out = stack[0]
        return np.where(np.isfinite(out), out, np.nan)


def _interp(xs, vs, q):
    # np.interp mishandles -inf endpoints (inf*0); do it explicitly
    idx = np.clip(np.searchsorted(xs, q, side="right") - 1, 0, len(xs) - 2)
    x0, x1 = xs[idx], xs[idx + 1]
    w = np.clip((q - x0) / (x1 - x0), 0.0, 1.0)
    v0, v1 = vs[idx], vs[idx + 1]
    with np.errstate(invalid="ignore"):
        out = v0 + w * (v1 - v0)
    out = np.where(np.isfinite(v0) & np.isfinite(v1), out, -np.inf)
    out = np.where((w == 0.0) & np.isfinite(v0), v0, out)
    out = np.where((w == 1.0) & np.isfinite(v1), v1, out)
    return out


def bellman_step(ops, args, x_nodes, f_nodes, x_grid, v_next, lo, hi, weight, dt, t,
                 c_floor, iters):
    x_nodes = np.asarray(x_nodes, dtype=float)
    f_nodes = np.asarray(f_nodes, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    v_next = np.asarray(v_next, dtype=float)
    r = 0.6180339887498949

    def objective(q):
        cons = f_nodes - (q - x_nodes) / dt
        u = values(ops, args, cons, x_nodes, t)
        val = weight * u + _interp(x_grid, v_next, q)
        return np.where(np.isnan(val), -np.inf, val)

    a = np.full(x_nodes.shape, x_grid[lo])
    b = np.minimum(x_nodes + dt * (f_nodes - c_floor), x_grid[hi])
    dead = (b < a) | ~np.isfinite(f_nodes)
    b = np.where(dead, a, b)
    a0, b0 = a.copy(), b.copy()
    p = b - r * (b - a)
    q = a + r * (b - a)
    gp, gq = objective(p), objective(q)
    for _ in range(iters):
        left = gp >= gq
        # shrink toward the better probe; one new evaluation per node
        b = np.where(left, q, b)
        a = np.where(left, a, p)
        new_q = np.where(left, p, a + r * (b - a))
        new_p = np.where(left, b - r * (b - a), q)
        g_new = objective(np.where(left, new_p, new_q))
        gq, gp = np.where(left, gp, g_new), np.where(left, g_new, gq)
        p, q = new_p, new_q
    best = np.where(gp >= gq, gp, gq)
    bestx = np.where(gp >= gq, p, q)
    for edge in (a0, b0):
        g = objective(edge)
        better = g > best
        best = np.where(better, g, best)
        bestx = np.where(better, edge, bestx)
    best = np.where(dead, -np.inf, best)
    bestx = np.where(dead, np.nan, bestx)
    cons = np.where(dead, np.nan, f_nodes - (bestx - x_nodes) / dt)
    return best, bestx, cons
