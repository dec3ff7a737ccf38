# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: expression jets and the Bellman step of the oracle.

Programs are the postfix ``(ops, args)`` pairs produced by
``octrl.expr.compile_expr``. Status codes: 0 ok, 1 domain error,
2 non-finite result.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, pow, isfinite, floor, INFINITY, NAN
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF OP_CONST = 0
DEF OP_VAR = 1
DEF OP_NEG = 2
DEF OP_ADD = 3
DEF OP_SUB = 4
DEF OP_MUL = 5
DEF OP_DIV = 6
DEF OP_POW = 7
DEF OP_POWI = 8
DEF OP_LN = 9
DEF OP_EXP = 10

DEF J = 10  # v, gc, gx, gt, hcc, hcx, hct, hxx, hxt, htt

cdef int PI[6]
cdef int PJ[6]
PI[:] = [0, 0, 0, 1, 1, 2]
PJ[:] = [0, 1, 2, 1, 2, 2]


cdef inline void _chain(double* a, double d0, double d1, double d2) noexcept nogil:
    cdef int k
    for k in range(6):
        a[4 + k] = d1 * a[4 + k] + d2 * a[1 + PI[k]] * a[1 + PJ[k]]
    for k in range(3):
        a[1 + k] = d1 * a[1 + k]
    a[0] = d0


cdef inline void _mul(double* a, const double* b) noexcept nogil:
    # a <- a * b
    cdef double h[6]
    cdef int k
    for k in range(6):
        h[k] = a[0] * b[4 + k] + b[0] * a[4 + k] + a[1 + PI[k]] * b[1 + PJ[k]] + a[1 + PJ[k]] * b[1 + PI[k]]
    for k in range(3):
        a[1 + k] = a[0] * b[1 + k] + b[0] * a[1 + k]
    for k in range(6):
        a[4 + k] = h[k]
    a[0] = a[0] * b[0]


cdef inline bint _is_const(const double* a) noexcept nogil:
    cdef int k
    for k in range(1, J):
        if a[k] != 0.0:
            return False
    return True


cdef int _run_jet(const int* ops, const double* args, int n, double c, double x, double t,
                  double* stack, double* out) noexcept nogil:
    cdef int sp = 0, i, k, m
    cdef double* a
    cdef double* b
    cdef double y, p
    for i in range(n):
        if ops[i] == OP_CONST or ops[i] == OP_VAR:
            a = stack + sp * J
            for k in range(J):
                a[k] = 0.0
            if ops[i] == OP_CONST:
                a[0] = args[i]
            else:
                m = <int>args[i]
                a[0] = c if m == 0 else (x if m == 1 else t)
                a[1 + m] = 1.0
            sp += 1
        elif ops[i] == OP_NEG:
            a = stack + (sp - 1) * J
            for k in range(J):
                a[k] = -a[k]
        elif ops[i] == OP_LN:
            a = stack + (sp - 1) * J
            y = a[0]
            if not (y > 0.0):
                return 1
            _chain(a, log(y), 1.0 / y, -1.0 / (y * y))
        elif ops[i] == OP_EXP:
            a = stack + (sp - 1) * J
            y = exp(a[0])
            _chain(a, y, y, y)
        elif ops[i] == OP_POWI:
            a = stack + (sp - 1) * J
            y = a[0]
            m = <int>args[i]
            if m == 0:
                for k in range(J):
                    a[k] = 0.0
                a[0] = 1.0
            elif m != 1:
                if y == 0.0 and m < 0:
                    return 1
                if m == 2:
                    _chain(a, y * y, 2.0 * y, 2.0)
                else:
                    _chain(a, pow(y, m), m * pow(y, m - 1), m * (m - 1.0) * pow(y, m - 2))
        else:
            sp -= 1
            a = stack + (sp - 1) * J
            b = stack + sp * J
            if ops[i] == OP_ADD:
                for k in range(J):
                    a[k] += b[k]
            elif ops[i] == OP_SUB:
                for k in range(J):
                    a[k] -= b[k]
            elif ops[i] == OP_MUL:
                _mul(a, b)
            elif ops[i] == OP_DIV:
                y = b[0]
                if y == 0.0:
                    return 1
                _chain(b, 1.0 / y, -1.0 / (y * y), 2.0 / (y * y * y))
                _mul(a, b)
            else:  # OP_POW
                y = a[0]
                if _is_const(b):
                    p = b[0]
                    if p == floor(p) and p > -1e15 and p < 1e15:
                        m = <int>p
                        if m == 0:
                            for k in range(J):
                                a[k] = 0.0
                            a[0] = 1.0
                        elif m != 1:
                            if y == 0.0 and m < 0:
                                return 1
                            _chain(a, pow(y, m), m * pow(y, m - 1), m * (m - 1.0) * pow(y, m - 2))
                    else:
                        if not (y > 0.0):
                            return 1
                        _chain(a, pow(y, p), p * pow(y, p - 1.0), p * (p - 1.0) * pow(y, p - 2.0))
                else:
                    if not (y > 0.0):
                        return 1
                    _chain(a, log(y), 1.0 / y, -1.0 / (y * y))
                    _mul(a, b)
                    y = exp(a[0])
                    _chain(a, y, y, y)
    for k in range(J):
        out[k] = stack[k]
        if not isfinite(out[k]):
            return 2
    return 0


cdef int _run_value(const int* ops, const double* args, int n, double c, double x, double t,
                    double* stack, double* out) noexcept nogil:
    cdef int sp = 0, i, m
    cdef double a, b
    for i in range(n):
        if ops[i] == OP_CONST:
            stack[sp] = args[i]
            sp += 1
        elif ops[i] == OP_VAR:
            m = <int>args[i]
            stack[sp] = c if m == 0 else (x if m == 1 else t)
            sp += 1
        elif ops[i] == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif ops[i] == OP_LN:
            a = stack[sp - 1]
            if not (a > 0.0):
                return 1
            stack[sp - 1] = log(a)
        elif ops[i] == OP_EXP:
            stack[sp - 1] = exp(stack[sp - 1])
        elif ops[i] == OP_POWI:
            a = stack[sp - 1]
            m = <int>args[i]
            if a == 0.0 and m < 0:
                return 1
            stack[sp - 1] = pow(a, m)
        else:
            sp -= 1
            a = stack[sp - 1]
            b = stack[sp]
            if ops[i] == OP_ADD:
                stack[sp - 1] = a + b
            elif ops[i] == OP_SUB:
                stack[sp - 1] = a - b
            elif ops[i] == OP_MUL:
                stack[sp - 1] = a * b
            elif ops[i] == OP_DIV:
                if b == 0.0:
                    return 1
                stack[sp - 1] = a / b
            else:
                if b == floor(b) and b > -1e15 and b < 1e15:
                    if a == 0.0 and b < 0:
                        return 1
                    stack[sp - 1] = pow(a, b)
                else:
                    if not (a > 0.0):
                        return 1
                    stack[sp - 1] = pow(a, b)
    out[0] = stack[0]
    if not isfinite(out[0]):
        return 2
    return 0


def jet(const int[::1] ops, const double[::1] args, double c, double x, double t):
    """Return ``(status, (v, gc, gx, gt, hcc, hcx, hct, hxx, hxt, htt))``."""
    cdef int n = ops.shape[0]
    cdef double out[J]
    cdef double* stack = <double*>malloc(n * J * sizeof(double) + sizeof(double))
    cdef int status
    if stack == NULL:
        raise MemoryError()
    try:
        status = _run_jet(&ops[0], &args[0], n, c, x, t, stack, out)
    finally:
        free(stack)
    return status, (out[0], out[1], out[2], out[3], out[4], out[5], out[6], out[7], out[8], out[9])


def values(const int[::1] ops, const double[::1] args, c, x, t):
    """Value-only evaluation broadcast over arrays; failures give nan."""
    cb, xb, tb = np.broadcast_arrays(np.asarray(c, dtype=np.float64),
                                     np.asarray(x, dtype=np.float64),
                                     np.asarray(t, dtype=np.float64))
    cdef const double[::1] cf = np.ascontiguousarray(cb, dtype=np.float64).ravel()
    cdef const double[::1] xf = np.ascontiguousarray(xb, dtype=np.float64).ravel()
    cdef const double[::1] tf = np.ascontiguousarray(tb, dtype=np.float64).ravel()
    cdef Py_ssize_t m = cf.shape[0], k
    result = np.empty(m, dtype=np.float64)
    cdef double[::1] res = result
    cdef int n = ops.shape[0]
    cdef double* stack = <double*>malloc(n * sizeof(double) + sizeof(double))
    cdef double v
    if stack == NULL:
        raise MemoryError()
    try:
        with nogil:
            for k in range(m):
                if _run_value(&ops[0], &args[0], n, cf[k], xf[k], tf[k], stack, &v) == 0:
                    res[k] = v
                else:
                    res[k] = NAN
    finally:
        free(stack)
    return result.reshape(cb.shape)


cdef inline double _interp(const double* xs, const double* vs, Py_ssize_t n, double q) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n - 1, mid
    cdef double w
    if q <= xs[0]:
        return vs[0]
    if q >= xs[n - 1]:
        return vs[n - 1]
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if xs[mid] <= q:
            lo = mid
        else:
            hi = mid
    w = (q - xs[lo]) / (xs[hi] - xs[lo])
    if not isfinite(vs[lo]) or not isfinite(vs[hi]):
        if w == 0.0 and isfinite(vs[lo]):
            return vs[lo]
        if w == 1.0 and isfinite(vs[hi]):
            return vs[hi]
        return -INFINITY
    if w == 0.0:
        return vs[lo]
    if w == 1.0:
        return vs[hi]
    return vs[lo] + w * (vs[hi] - vs[lo])


cdef inline double _objective(const int* ops, const double* args, int n, double* stack,
                              double xi, double fi, double ti, double xq, double weight, double dt,
                              const double* xs, const double* vs, Py_ssize_t nx) noexcept nogil:
    cdef double cons = fi - (xq - xi) / dt
    cdef double u
    if _run_value(ops, args, n, cons, xi, ti, stack, &u) != 0:
        return -INFINITY
    return weight * u + _interp(xs, vs, nx, xq)


def bellman_step(const int[::1] ops, const double[::1] args,
                 const double[::1] x_nodes, const double[::1] f_nodes,
                 const double[::1] x_grid, const double[::1] v_next,
                 Py_ssize_t lo, Py_ssize_t hi, double weight, double dt, double t,
                 double c_floor, int iters):
    """One backward-induction slice.

    For every node maximizes ``weight*u(c, x_i) + V_next(x')`` over the next
    state ``x'`` in ``[x_grid[lo], min(x_grid[hi], x_i + dt*(f_i - c_floor))]``
    with ``c = f_i - (x' - x_i)/dt`` and ``V_next`` linearly interpolated.
    Golden-section search; exact for concave objectives. Returns
    ``(values, next_states, consumptions)``.
    """
    cdef Py_ssize_t m = x_nodes.shape[0], nx = x_grid.shape[0], i
    cdef int n = ops.shape[0], it
    val = np.empty(m)
    nxt = np.empty(m)
    con = np.empty(m)
    cdef double[::1] vv = val, xn = nxt, cc = con
    cdef double* stack = <double*>malloc(n * sizeof(double) + sizeof(double))
    cdef double a, b, a0, b0, p, q, gp, gq, best, bestx, g, xi, fi
    cdef double r = 0.6180339887498949
    if stack == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(m):
                xi = x_nodes[i]
                fi = f_nodes[i]
                a = x_grid[lo]
                b = xi + dt * (fi - c_floor)
                if x_grid[hi] < b:
                    b = x_grid[hi]
                if b < a or not isfinite(fi):
                    vv[i] = -INFINITY
                    xn[i] = NAN
                    cc[i] = NAN
                    continue
                a0 = a
                b0 = b
                p = b - r * (b - a)
                q = a + r * (b - a)
                gp = _objective(&ops[0], &args[0], n, stack, xi, fi, t, p, weight, dt, &x_grid[0], &v_next[0], nx)
                gq = _objective(&ops[0], &args[0], n, stack, xi, fi, t, q, weight, dt, &x_grid[0], &v_next[0], nx)
                for it in range(iters):
                    if gp >= gq:
                        b = q
                        q = p
                        gq = gp
                        p = b - r * (b - a)
                        gp = _objective(&ops[0], &args[0], n, stack, xi, fi, t, p, weight, dt, &x_grid[0], &v_next[0], nx)
                    else:
                        a = p
                        p = q
                        gp = gq
                        q = a + r * (b - a)
                        gq = _objective(&ops[0], &args[0], n, stack, xi, fi, t, q, weight, dt, &x_grid[0], &v_next[0], nx)
                if gp >= gq:
                    best = gp
                    bestx = p
                else:
                    best = gq
                    bestx = q
                # endpoints catch corner solutions
                g = _objective(&ops[0], &args[0], n, stack, xi, fi, t, a0, weight, dt, &x_grid[0], &v_next[0], nx)
                if g > best:
                    best = g
                    bestx = a0
                g = _objective(&ops[0], &args[0], n, stack, xi, fi, t, b0, weight, dt, &x_grid[0], &v_next[0], nx)
                if g > best:
                    best = g
                    bestx = b0
                vv[i] = best
                xn[i] = bestx
                cc[i] = fi - (bestx - xi) / dt
    finally:
        free(stack)
    return val, nxt, con
