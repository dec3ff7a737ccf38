"""Problem instances: discounted utility ``u(c, x)``, budget ``c + x' = f(x, t)``.

Problem files are TOML with the following keys::

    theta = 0.03              # discount rate, > 0
    u = "ln(c)"               # utility in c (and optionally x)
    v = "ln(x)"               # optional wealth term; u + v is used
    f = "R*x + w"             # either f ...
    R = "R"                   # ... or the pair R(t), w(t): f = R*x + w
    w = "w"
    f_limit = "0.05*x + 0.2"  # optional autonomous limit of a time-varying f
    x0 = 1.0
    t0 = 0.0                  # optional
    state_nonneg = true       # optional, x(t) >= 0
    [params]                  # numerals substituted into every expression
    R = 0.05
    w = 0.2
"""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .expr import Add, Compiled, Expr, Mul, Neg, Num, Sub, Var, format_expr, parse

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ProblemError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    theta: float
    u: Expr
    f: Expr
    x0: float
    t0: float = 0.0
    state_nonneg: bool = True
    params: Mapping[str, float] = field(default_factory=dict)
    u_part: Expr | None = None  # consumption part when u = u(c) + v(x)
    v_part: Expr | None = None
    f_limit: Expr | None = None
    name: str = ""

    def __post_init__(self):
        if not self.theta > 0:
            raise ProblemError("discount rate must be positive")
        if not self.u.variables() <= {"c", "x"}:
            raise ProblemError("u may depend only on c and x")
        if not self.f.variables() <= {"x", "t"}:
            raise ProblemError("f may depend only on x and t")
        if self.f_limit is not None and not self.f_limit.variables() <= {"x"}:
            raise ProblemError("f_limit must depend on x only")
        if self.state_nonneg and self.x0 < 0:
            raise ProblemError("x0 must be nonnegative when the state is constrained")
        object.__setattr__(self, "_u", Compiled(self.u))
        object.__setattr__(self, "_f", Compiled(self.f))

    @property
    def separable(self) -> bool:
        return self.u_part is not None

    @property
    def autonomous(self) -> bool:
        return not self.f.depends_on("t")

    @property
    def u_fast(self) -> Compiled:
        return self._u  # type: ignore[attr-defined]

    @property
    def f_fast(self) -> Compiled:
        return self._f  # type: ignore[attr-defined]

    def limit_spec(self) -> "ProblemSpec":
        """Autonomous version used for steady states and shooting."""
        if self.autonomous:
            return self
        if self.f_limit is None:
            raise ProblemError("time-varying f needs an f_limit for steady-state analysis")
        return replace(self, f=self.f_limit, f_limit=None)

    def fingerprint(self) -> str:
        text = "|".join([
            repr(self.theta), format_expr(self.u), format_expr(self.f), repr(self.x0),
            repr(self.t0), str(self.state_nonneg),
            format_expr(self.f_limit) if self.f_limit is not None else "",
        ])
        return hashlib.sha256(text.encode()).hexdigest()

    def describe(self) -> dict:
        return {
            "theta": self.theta,
            "u": format_expr(self.u),
            "f": format_expr(self.f),
            "x0": self.x0,
            "t0": self.t0,
            "state_nonneg": self.state_nonneg,
            "separable": self.separable,
            "params": dict(sorted(self.params.items())),
        }


def _terms(e: Expr, sign: float = 1.0):
    if isinstance(e, Add):
        yield from _terms(e.left, sign)
        yield from _terms(e.right, sign)
    elif isinstance(e, Sub):
        yield from _terms(e.left, sign)
        yield from _terms(e.right, -sign)
    else:
        yield sign, e


def _sum(terms) -> Expr:
    out: Expr | None = None
    for sign, t in terms:
        if out is None:
            out = t if sign > 0 else Neg(t)
        else:
            out = Add(out, t) if sign > 0 else Sub(out, t)
    return out if out is not None else Num(0.0)


def split_separable(u: Expr) -> tuple[Expr, Expr] | None:
    """Split ``u`` into ``(u(c), v(x))`` when every additive term depends on one side."""
    c_terms, x_terms = [], []
    for sign, t in _terms(u):
        vs = t.variables()
        if "c" in vs and "x" in vs:
            return None
        (x_terms if "x" in vs else c_terms).append((sign, t))
    if not x_terms:
        return None
    return _sum(c_terms), _sum(x_terms)


def _parse(text, params, what: str) -> Expr:
    if not isinstance(text, str):
        text = repr(float(text))
    try:
        return parse(text, params)
    except ValueError as exc:
        raise ProblemError(f"{what}: {exc}") from exc


def make_spec(theta, u_text, x0, *, f_text=None, R_text=None, w_text=None, v_text=None,
              params=None, t0=0.0, state_nonneg=True, f_limit_text=None, name="") -> ProblemSpec:
    params = dict(params or {})
    u = _parse(u_text, params, "u")
    u_part = v_part = None
    if v_text is not None:
        v_part = _parse(v_text, params, "v")
        if v_part.variables() - {"x"}:
            raise ProblemError("v may depend only on x")
        u_part, u = u, Add(u, v_part)
    else:
        split = split_separable(u)
        if split is not None:
            u_part, v_part = split
    if f_text is not None:
        if R_text is not None or w_text is not None:
            raise ProblemError("give either f or the R/w pair, not both")
        f = _parse(f_text, params, "f")
    elif R_text is not None and w_text is not None:
        R = _parse(R_text, params, "R")
        w = _parse(w_text, params, "w")
        for label, e in (("R", R), ("w", w)):
            if e.variables() - {"t"}:
                raise ProblemError(f"{label} may depend only on t")
        f = Add(Mul(R, Var("x")), w)
    else:
        raise ProblemError("missing field: f (or both R and w)")
    f_limit = _parse(f_limit_text, params, "f_limit") if f_limit_text is not None else None
    return ProblemSpec(float(theta), u, f, float(x0), float(t0), bool(state_nonneg), params,
                       u_part, v_part, f_limit, name)


def load_spec(path, overrides: Mapping[str, float] | None = None) -> ProblemSpec:
    """Read a problem file and substitute its parameters (after ``overrides``)."""
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ProblemError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ProblemError(f"parse error in {path}: {exc}") from exc
    return spec_from_mapping(data, overrides, name=path.stem)


_KEYS = {"theta", "u", "v", "f", "R", "w", "f_limit", "x0", "t0", "state_nonneg", "params", "name"}


def spec_from_mapping(data: Mapping, overrides: Mapping[str, float] | None = None,
                      name: str = "") -> ProblemSpec:
    unknown = set(data) - _KEYS
    if unknown:
        raise ProblemError(f"unknown field(s): {', '.join(sorted(unknown))}")
    for key in ("theta", "u", "x0"):
        if key not in data:
            raise ProblemError(f"missing field: {key}")
    params = {k: float(v) for k, v in dict(data.get("params", {})).items()}
    for k, v in dict(overrides or {}).items():
        if k not in params:
            raise ProblemError(f"unknown parameter {k!r}")
        params[k] = float(v)
    theta = data["theta"]
    if isinstance(theta, str):
        theta = float(theta) if theta not in params else params[theta]
    if not float(theta) > 0:
        raise ProblemError("discount rate must be positive")
    return make_spec(
        theta, data["u"], data["x0"], f_text=data.get("f"), R_text=data.get("R"),
        w_text=data.get("w"), v_text=data.get("v"), params=params, t0=data.get("t0", 0.0),
        state_nonneg=data.get("state_nonneg", True), f_limit_text=data.get("f_limit"),
        name=data.get("name", name),
    )


def template_growth(theta, u_text, f_text, x0) -> ProblemSpec:
    """Optimal growth: autonomous technology ``f(x)``, capital ``x >= 0``."""
    f = _parse(f_text, {}, "f")
    if f.depends_on("t"):
        raise ProblemError("growth technology must not depend on t (not autonomous)")
    return make_spec(theta, u_text, x0, f_text=f_text, state_nonneg=True, name="growth")


def template_linear_wealth(theta, u_text, R_text, w_text, x0) -> ProblemSpec:
    """Consumer saving: ``f(x, t) = R(t) x + w(t)`` with no borrowing."""
    return make_spec(theta, u_text, x0, R_text=R_text, w_text=w_text, state_nonneg=True,
                     name="linear_wealth")


# ---------------------------------------------------------------------------
# Paths


@dataclass(frozen=True, eq=False)
class AdmissiblePath:
    t: np.ndarray
    x: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("path needs at least two grid nodes")
        if not (len(x) == len(c) == len(t)):
            raise ValueError("t, x and c must have the same length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "c", c)

    def __len__(self) -> int:
        return len(self.t)

    def xdot(self) -> np.ndarray:
        """Centered differences inside, second-order one-sided at the ends."""
        if len(self.t) < 3:
            return np.gradient(self.x, self.t)
        return np.gradient(self.x, self.t, edge_order=2)

    def truncate(self, t_end: float) -> "AdmissiblePath":
        keep = self.t <= t_end + 1e-12
        return type(self)(self.t[keep], self.x[keep], self.c[keep])


@dataclass
class FeasibilityReport:
    max_dyn_residual: float
    min_x: float
    min_c: float
    tol: float
    passed: bool
    worst_t: float = math.nan

    def to_dict(self) -> dict:
        return {
            "max_dyn_residual": self.max_dyn_residual,
            "min_x": self.min_x,
            "min_c": self.min_c,
            "tol": self.tol,
            "pass": self.passed,
            "worst_t": self.worst_t,
        }


def dynamics_residual(p: AdmissiblePath, s: ProblemSpec) -> np.ndarray:
    """``c + x' - f(x, t)`` at every node."""
    f = s.f_fast.values(0.0, p.x, p.t)
    return p.c + p.xdot() - f


def feasibility_check(p: AdmissiblePath, s: ProblemSpec, tol: float | None = None) -> FeasibilityReport:
    """Budget identity at interior nodes and sign constraints at all nodes.

    ``tol`` defaults to ``1e-6 * (1 + max |f|)``.
    """
    f = s.f_fast.values(0.0, p.x, p.t)
    if tol is None:
        tol = 1e-6 * (1.0 + float(np.nanmax(np.abs(f))))
    res = np.abs(p.c + p.xdot() - f)
    inner = res[1:-1] if len(res) > 2 else res
    inner = np.where(np.isnan(inner), np.inf, inner)
    k = int(np.argmax(inner))
    max_res = float(inner[k])
    worst_t = float(p.t[1:-1][k] if len(res) > 2 else p.t[k])
    min_x = float(np.min(p.x))
    min_c = float(np.min(p.c))
    ok = max_res <= tol and min_c >= -tol
    if s.state_nonneg:
        ok = ok and min_x >= -tol
    return FeasibilityReport(max_res, min_x, min_c, float(tol), bool(ok), worst_t)
