"""Compare the compiled kernels with the numpy/pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]

Each row times one workload on both backends and checks that their outputs
agree before reporting the speedup.
"""

import argparse
import math
import sys
import time

import numpy as np

from octrl import _backend
from octrl.expr import Compiled, parse
from octrl.oracle import DiscretizedProblem, backward_induction
from octrl.problem import template_growth
from octrl.solver import ShootingConfig, shoot
from octrl.verify import example1_spec

U_TEXT = "c^(1-2)/(1-2) + 0.5*ln(x) + exp(-c*x/10)"


def best_of(fn, repeat):
    out, best = None, math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def jet_loop(kernels, n):
    e = Compiled(parse(U_TEXT), kernels)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0.1, 10.0, size=(n, 2))

    def run():
        return [e.jet(c, x, 0.0) for c, x in pts]

    return run


def values_vec(kernels, n):
    e = Compiled(parse(U_TEXT), kernels)
    rng = np.random.default_rng(1)
    c = rng.uniform(0.1, 10.0, n)
    x = rng.uniform(0.1, 10.0, n)
    return lambda: np.asarray(e.values(c, x, 0.0))


def oracle(kernels, steps):
    s = example1_spec()
    T = steps * 0.05
    xT = 5.0 * math.exp(0.02 * T) - 4.0
    d = DiscretizedProblem.build(s, T, 0.05, 400, terminal=xT)
    return lambda: backward_induction(s, d, kernels=kernels).V[0]


def shooting(kernels):
    def run():
        prev = _backend.kernels
        _backend.kernels = kernels
        try:
            s = template_growth(0.03, "ln(c)", "x^0.3", 13.41347897639863)
            return np.array([shoot(s, ShootingConfig(T=300, n_out=601)).c0])
        finally:
            _backend.kernels = prev

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller workloads")
    args = ap.parse_args(argv)
    try:
        fast = _backend.get("cython")
    except ImportError:
        print("compiled extension not built; run: python3 setup.py build_ext --inplace")
        return 1
    slow = _backend.get("python")
    n = 20_000 if args.quick else 100_000
    steps = 200 if args.quick else 1000
    cases = [
        (f"jet, {n} scalar points", lambda k: jet_loop(k, n)),
        (f"values, {10 * n} points", lambda k: values_vec(k, 10 * n)),
        (f"backward induction, {steps} steps x 400 nodes", lambda k: oracle(k, steps)),
        ("Ramsey shooting, T=300", shooting),
    ]
    print(f"{'workload':48s} {'cython s':>10s} {'python s':>10s} {'speedup':>8s}")
    for name, make in cases:
        t_fast, out_fast = best_of(make(fast), args.repeat)
        t_slow, out_slow = best_of(make(slow), max(1, args.repeat // 3))
        a = np.asarray(out_fast, dtype=float)
        b = np.asarray(out_slow, dtype=float)
        if not np.allclose(a, b, rtol=1e-9, atol=1e-12, equal_nan=True):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        print(f"{name:48s} {t_fast:10.4f} {t_slow:10.4f} {t_slow / t_fast:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
