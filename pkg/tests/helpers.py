import copy
from pathlib import Path

import numpy as np

from octrl.verify import closed_form_example1

ACCEPTANCE_LINES: list = []

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"

X_STAR_RAMSEY = (0.3 / 0.03) ** (1 / 0.7)


def closed_form_on(t_end, n, **kw):
    return closed_form_example1(grid=np.linspace(0.0, t_end, n), **kw)


def rel(a, b):
    return abs(a - b) / abs(b) if b else abs(a)


def undiscounted(s):
    """Copy of ``s`` with theta = 0, a limit that problem specs themselves reject."""
    out = copy.copy(s)
    object.__setattr__(out, "theta", 0.0)
    return out


CONCAVE_F = (
    lambda r: f"{r.uniform(0.2, 3):.3f} * x^{r.uniform(0.1, 0.9):.3f} + {r.uniform(0, 1):.3f}",
    lambda r: f"{r.uniform(0.001, 0.1):.4f} * x + {r.uniform(0, 1):.3f}",
    lambda r: f"{r.uniform(0.2, 2):.3f} * ln(1 + x)",
    lambda r: f"{r.uniform(0.01, 0.1):.3f} * x + {r.uniform(0.05, 1):.3f} * exp(-t)",
    lambda r: f"{r.uniform(0.5, 2):.3f} * x^0.5 * (1 + 0.5 * exp(-t))",
)


def random_feasible_path(rng, n=400):
    """A random concave technology and a path feasible under it.

    The state is a smooth positive curve; consumption is read off the budget
    identity with the same difference quotient the checks use, so the path
    is feasible on the grid by construction. Oscillations are damped until
    consumption is nonnegative everywhere.
    """
    from octrl.problem import AdmissiblePath, make_spec

    s = make_spec(0.03, "ln(c)", 1.0, f_text=rng.choice(CONCAVE_F)(rng))
    t = np.linspace(0.0, rng.uniform(5, 100), n)
    x0 = 10 ** rng.uniform(-1, 1.5)
    amp, rate = rng.uniform(0, 1), rng.uniform(-0.05, 0.05)
    omega, phase = rng.uniform(0.05, 2), rng.uniform(0, 6.3)
    for _ in range(60):
        x = x0 * np.exp(amp * np.sin(omega * t + phase) - amp * np.sin(phase) + rate * t)
        p = AdmissiblePath(t, x, np.zeros_like(t))
        c = s.f_fast.values(0.0, x, t) - p.xdot()
        if np.min(c) >= 0:
            return s, AdmissiblePath(t, x, c)
        amp *= 0.7
        rate = 0.7 * rate - 0.01
    raise RuntimeError("could not build a feasible path")
