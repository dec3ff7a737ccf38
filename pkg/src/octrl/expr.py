"""Scalar expressions in the variables ``c``, ``x`` and ``t``.

Grammar (highest precedence last)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right-associative
    atom    := NUMBER | VAR | FUNC '(' args ')' | '(' expr ')'
    VAR     := 'c' | 'x' | 't'
    FUNC    := 'ln' | 'exp' | 'pow'       # pow takes two arguments

Sub-expressions built only from numerals are folded while parsing, so
``c^(1-0.5)/(1-0.5)`` parses to ``Div(Pow(Var('c'), Num(0.5)), Num(0.5))``.
Model parameters are not part of the grammar; callers substitute them as
numerals through the ``params`` argument of :func:`parse`.

Derivatives are computed in forward mode with second-order dual numbers
(:class:`Jet`), never by finite differences.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Union

VARIABLES = ("c", "x", "t")
FUNCTIONS = {"ln": 1, "exp": 1, "pow": 2}

# (i, j) index pairs of the packed upper-triangular Hessian
_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
_PAIR_INDEX = {}
for _k, (_i, _j) in enumerate(_PAIRS):
    _PAIR_INDEX[(_i, _j)] = _k
    _PAIR_INDEX[(_j, _i)] = _k


class ExprError(ValueError):
    """Base class for parse and evaluation failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class UnknownIdentifier(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f'unknown identifier "{name}" at byte offset {offset}')
        self.name = name
        self.offset = offset


class UnknownFunction(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f'unknown function "{name}" at byte offset {offset}')
        self.name = name
        self.offset = offset


class DomainError(ExprError, ArithmeticError):
    """Raised when ln or a non-integer power leaves its domain."""


class UnboundVariable(ExprError):
    pass


class NonFiniteResult(ExprError, ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# AST


class Expr:
    __slots__ = ()

    def variables(self) -> frozenset:
        out: set = set()
        _collect_vars(self, out)
        return frozenset(out)

    def depends_on(self, name: str) -> bool:
        return name in self.variables()

    def __str__(self) -> str:
        return format_expr(self)


@dataclass(frozen=True, slots=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise UnknownIdentifier(self.name, 0)


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True, slots=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Ln(Expr):
    operand: Expr


@dataclass(frozen=True, slots=True)
class Exp(Expr):
    operand: Expr


BINARY = {Add: "+", Sub: "-", Mul: "*", Div: "/", Pow: "^"}
UNARY_FUNCS = {Ln: "ln", Exp: "exp"}


def _collect_vars(e: Expr, out: set) -> None:
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, Num):
        return
    elif isinstance(e, (Neg, Ln, Exp)):
        _collect_vars(e.operand, out)
    else:
        _collect_vars(e.left, out)
        _collect_vars(e.right, out)


def is_constant(e: Expr) -> bool:
    return not e.variables()


# ---------------------------------------------------------------------------
# Lexer / parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


@dataclass
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    raw = text.encode("utf-8")
    toks: list[_Tok] = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            # first non-space character is not a valid token start
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(
                f"unexpected character {text[bad]!r}", len(text[:bad].encode("utf-8"))
            )
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), len(text[:start].encode("utf-8"))))
        pos = m.end()
    toks.append(_Tok("end", "", len(raw)))
    return toks


def _fold(node: Expr) -> Expr:
    """Replace a numeral-only node by its value."""
    if isinstance(node, Num) or not is_constant(node):
        return node
    try:
        value = _eval_plain(node, {})
    except (ArithmeticError, ExprError):
        return node
    if not math.isfinite(value):
        return node
    return Num(value)


class _Parser:
    def __init__(self, text: str, params: Mapping[str, float] | None):
        self.toks = _tokenize(text)
        self.i = 0
        self.params = dict(params or {})

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> None:
        if self.tok.text != text or self.tok.kind != "op":
            found = self.tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", self.tok.offset)
        self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            rhs = self.term()
            node = _fold(Add(node, rhs) if op == "+" else Sub(node, rhs))
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            rhs = self.unary()
            node = _fold(Mul(node, rhs) if op == "*" else Div(node, rhs))
        return node

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return _fold(Neg(self.unary()))
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return _fold(Pow(base, self.unary()))
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(tok)
            if tok.text in VARIABLES:
                return Var(tok.text)
            if tok.text in self.params:
                return Num(float(self.params[tok.text]))
            raise UnknownIdentifier(tok.text, tok.offset)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = tok.text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", tok.offset)

    def call(self, name_tok: _Tok) -> Expr:
        name = name_tok.text
        if name not in FUNCTIONS:
            raise UnknownFunction(name, name_tok.offset)
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        if len(args) != FUNCTIONS[name]:
            raise ExprSyntaxError(
                f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}",
                name_tok.offset,
            )
        if name == "ln":
            return _fold(Ln(args[0]))
        if name == "exp":
            return _fold(Exp(args[0]))
        return _fold(Pow(args[0], args[1]))


def parse(text: str, params: Mapping[str, float] | None = None) -> Expr:
    """Parse ``text`` into an :class:`Expr`.

    Identifiers found in ``params`` are replaced by their numeric value;
    any other identifier outside ``{c, x, t}`` is an error.
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(text, params).parse()


# ---------------------------------------------------------------------------
# Formatting


def _format_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        s = str(int(v))
    else:
        s = repr(v)
    return f"({s})" if v < 0 or s.startswith("-") else s


def _is_atom(e: Expr) -> bool:
    return isinstance(e, (Var, Ln, Exp)) or (isinstance(e, Num) and not _format_num(e.value).startswith("("))


def _wrap(e: Expr) -> str:
    s = format_expr(e)
    return s if _is_atom(e) or (isinstance(e, Num)) else f"({s})"


def format_expr(e: Expr) -> str:
    """Canonical text: every non-atomic operand is parenthesized."""
    if isinstance(e, Num):
        return _format_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"-{_wrap(e.operand)}"
    if type(e) in UNARY_FUNCS:
        return f"{UNARY_FUNCS[type(e)]}({format_expr(e.operand)})"
    return f"{_wrap(e.left)} {BINARY[type(e)]} {_wrap(e.right)}"


format = format_expr  # noqa: A001  public name per module contract


# ---------------------------------------------------------------------------
# Plain evaluation (floats or numpy arrays)


def _is_integer(v: float) -> bool:
    return float(v).is_integer()


def _eval_plain(e: Expr, env: Mapping[str, float]) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariable(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Neg):
        return -_eval_plain(e.operand, env)
    if isinstance(e, Ln):
        a = _eval_plain(e.operand, env)
        if a <= 0:
            raise DomainError(f"ln argument must be positive, got {a!r}")
        return math.log(a)
    if isinstance(e, Exp):
        return math.exp(_eval_plain(e.operand, env))
    a = _eval_plain(e.left, env)
    b = _eval_plain(e.right, env)
    if isinstance(e, Add):
        return a + b
    if isinstance(e, Sub):
        return a - b
    if isinstance(e, Mul):
        return a * b
    if isinstance(e, Div):
        if b == 0:
            raise DomainError("division by zero")
        return a / b
    return _pow_value(a, b)


def _pow_value(a: float, b: float) -> float:
    if _is_integer(b):
        if a == 0 and b < 0:
            raise DomainError("zero raised to a negative power")
        return a ** int(b)
    if a <= 0:
        raise DomainError(f"base of non-integer power must be positive, got {a!r}")
    return a**b


def evaluate(e: Expr, bindings: Mapping[str, float]) -> float:
    """Value of ``e`` only."""
    try:
        value = _eval_plain(e, bindings)
    except OverflowError as exc:
        raise NonFiniteResult(str(exc)) from None
    if not math.isfinite(value):
        raise NonFiniteResult(f"non-finite result {value!r}")
    return value


def evaluate_array(e: Expr, c=0.0, x=0.0, t=0.0):
    """Vectorized value-only evaluation with numpy; domain violations give nan."""
    import numpy as np

    env = {"c": np.asarray(c, dtype=float), "x": np.asarray(x, dtype=float),
           "t": np.asarray(t, dtype=float)}

    def ev(n):
        if isinstance(n, Num):
            return n.value
        if isinstance(n, Var):
            return env[n.name]
        if isinstance(n, Neg):
            return -ev(n.operand)
        if isinstance(n, Ln):
            a = np.asarray(ev(n.operand), dtype=float)
            return np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), np.nan)
        if isinstance(n, Exp):
            return np.exp(ev(n.operand))
        a, b = ev(n.left), ev(n.right)
        if isinstance(n, Add):
            return a + b
        if isinstance(n, Sub):
            return a - b
        if isinstance(n, Mul):
            return a * b
        if isinstance(n, Div):
            b = np.asarray(b, dtype=float)
            return np.where(b != 0, a / np.where(b != 0, b, 1.0), np.nan)
        if isinstance(n.right, Num) and _is_integer(n.right.value):
            p = int(n.right.value)
            a = np.asarray(a, dtype=float)
            if p < 0:
                return np.where(a != 0, np.power(np.where(a != 0, a, 1.0), float(p)), np.nan)
            return np.power(a, float(p))
        a = np.asarray(a, dtype=float)
        return np.where(a > 0, np.power(np.where(a > 0, a, 1.0), b), np.nan)

    with np.errstate(all="ignore"):
        out = np.asarray(ev(e), dtype=float)
        return np.where(np.isfinite(out), out, np.nan)


# ---------------------------------------------------------------------------
# Second-order dual numbers


class Jet:
    """Value, gradient and packed Hessian over the variables (c, x, t).

    ``h`` holds the six upper-triangular second partials in the order
    cc, cx, ct, xx, xt, tt.
    """

    __slots__ = ("v", "g", "h")

    def __init__(self, v: float, g=(0.0, 0.0, 0.0), h=(0.0,) * 6):
        self.v = v
        self.g = g
        self.h = h

    @classmethod
    def variable(cls, value: float, index: int) -> "Jet":
        g = [0.0, 0.0, 0.0]
        g[index] = 1.0
        return cls(value, tuple(g))

    def __add__(self, o: "Jet") -> "Jet":
        return Jet(self.v + o.v, tuple(a + b for a, b in zip(self.g, o.g)),
                   tuple(a + b for a, b in zip(self.h, o.h)))

    def __sub__(self, o: "Jet") -> "Jet":
        return Jet(self.v - o.v, tuple(a - b for a, b in zip(self.g, o.g)),
                   tuple(a - b for a, b in zip(self.h, o.h)))

    def __neg__(self) -> "Jet":
        return Jet(-self.v, tuple(-a for a in self.g), tuple(-a for a in self.h))

    def __mul__(self, o: "Jet") -> "Jet":
        a, b = self, o
        g = tuple(a.v * gb + b.v * ga for ga, gb in zip(a.g, b.g))
        h = tuple(
            a.v * b.h[k] + b.v * a.h[k] + a.g[i] * b.g[j] + a.g[j] * b.g[i]
            for k, (i, j) in enumerate(_PAIRS)
        )
        return Jet(a.v * b.v, g, h)

    def chain(self, d0: float, d1: float, d2: float) -> "Jet":
        """Apply a scalar function with value d0, derivative d1, curvature d2."""
        g = tuple(d1 * gi for gi in self.g)
        h = tuple(d1 * self.h[k] + d2 * self.g[i] * self.g[j] for k, (i, j) in enumerate(_PAIRS))
        return Jet(d0, g, h)

    def __truediv__(self, o: "Jet") -> "Jet":
        if o.v == 0:
            raise DomainError("division by zero")
        y = o.v
        return self * o.chain(1.0 / y, -1.0 / (y * y), 2.0 / (y * y * y))

    def ln(self) -> "Jet":
        y = self.v
        if y <= 0:
            raise DomainError(f"ln argument must be positive, got {y!r}")
        return self.chain(math.log(y), 1.0 / y, -1.0 / (y * y))

    def exp(self) -> "Jet":
        e = math.exp(self.v)
        return self.chain(e, e, e)

    def is_constant(self) -> bool:
        return not any(self.g) and not any(self.h)

    def __pow__(self, o: "Jet") -> "Jet":
        y = self.v
        if o.is_constant():
            p = o.v
            if _is_integer(p):
                n = int(p)
                if n == 0:
                    return Jet(1.0)
                if n == 1:
                    return self
                if y == 0 and n < 0:
                    raise DomainError("zero raised to a negative power")
                d2 = n * (n - 1) * y ** (n - 2) if n != 2 else 2.0
                return self.chain(y**n, n * y ** (n - 1), d2)
            if y <= 0:
                raise DomainError(f"base of non-integer power must be positive, got {y!r}")
            return self.chain(y**p, p * y ** (p - 1), p * (p - 1) * y ** (p - 2))
        if y <= 0:
            raise DomainError(f"base of variable power must be positive, got {y!r}")
        return (o * self.ln()).exp()


def jet_eval(e: Expr, c: float, x: float, t: float) -> Jet:
    """Reference (pure Python) second-order forward-mode evaluation."""
    env = {"c": Jet.variable(c, 0), "x": Jet.variable(x, 1), "t": Jet.variable(t, 2)}

    def ev(n: Expr) -> Jet:
        if isinstance(n, Num):
            return Jet(n.value)
        if isinstance(n, Var):
            return env[n.name]
        if isinstance(n, Neg):
            return -ev(n.operand)
        if isinstance(n, Ln):
            return ev(n.operand).ln()
        if isinstance(n, Exp):
            return ev(n.operand).exp()
        a, b = ev(n.left), ev(n.right)
        if isinstance(n, Add):
            return a + b
        if isinstance(n, Sub):
            return a - b
        if isinstance(n, Mul):
            return a * b
        if isinstance(n, Div):
            return a / b
        return a**b

    try:
        return ev(e)
    except OverflowError as exc:
        raise NonFiniteResult(str(exc)) from None


@dataclass(frozen=True)
class DualValue:
    """Value with first and (symmetric) second partials keyed by variable."""

    value: float
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)

    def d(self, var: str) -> float:
        return self.first.get(var, 0.0)

    def dd(self, a: str, b: str) -> float:
        return self.second.get((a, b), 0.0)


Bindings = Mapping[str, Union[float, int]]


def eval_with_derivs(e: Expr, bindings: Bindings, order: int = 1) -> DualValue:
    """Evaluate ``e`` and its partials up to ``order`` (1 or 2)."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    for name in e.variables():
        if name not in bindings:
            raise UnboundVariable(f"variable {name!r} is not bound")
    vals = [float(bindings.get(v, 0.0)) for v in VARIABLES]
    j = jet_eval(e, *vals)
    bound = [v for v in VARIABLES if v in bindings]
    first = {v: j.g[VARIABLES.index(v)] for v in bound}
    second = {}
    if order == 2:
        for a in bound:
            for b in bound:
                k = _PAIR_INDEX[(VARIABLES.index(a), VARIABLES.index(b))]
                second[(a, b)] = j.h[k]
    numbers = [j.v, *first.values(), *second.values()]
    if not all(math.isfinite(n) for n in numbers):
        raise NonFiniteResult("non-finite value or derivative")
    return DualValue(j.v, first, second)


# ---------------------------------------------------------------------------
# Bytecode for the compiled kernels

OP_CONST, OP_VAR, OP_NEG, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_POWI, OP_LN, OP_EXP = range(11)


def compile_expr(e: Expr):
    """Postfix program ``(ops, args)`` consumed by the jet/value kernels.

    ``args`` carries the constant for OP_CONST, the variable index for
    OP_VAR and the integer exponent for OP_POWI.
    """
    import numpy as np

    ops: list[int] = []
    args: list[float] = []

    def emit(op, arg=0.0):
        ops.append(op)
        args.append(arg)

    def walk(n: Expr):
        if isinstance(n, Num):
            emit(OP_CONST, n.value)
        elif isinstance(n, Var):
            emit(OP_VAR, float(VARIABLES.index(n.name)))
        elif isinstance(n, Neg):
            walk(n.operand)
            emit(OP_NEG)
        elif isinstance(n, Ln):
            walk(n.operand)
            emit(OP_LN)
        elif isinstance(n, Exp):
            walk(n.operand)
            emit(OP_EXP)
        elif isinstance(n, Pow) and isinstance(n.right, Num) and _is_integer(n.right.value):
            walk(n.left)
            emit(OP_POWI, n.right.value)
        else:
            walk(n.left)
            walk(n.right)
            emit({Add: OP_ADD, Sub: OP_SUB, Mul: OP_MUL, Div: OP_DIV, Pow: OP_POW}[type(n)])

    walk(e)
    return np.asarray(ops, dtype=np.int32), np.asarray(args, dtype=np.float64)


class Compiled:
    """An :class:`Expr` bound to the active kernel backend for fast evaluation."""

    __slots__ = ("expr", "ops", "args", "_k")

    def __init__(self, e: Expr, kernels=None):
        from . import _backend

        self.expr = e
        self.ops, self.args = compile_expr(e)
        self._k = kernels or _backend.kernels

    def jet(self, c: float, x: float, t: float = 0.0) -> tuple:
        """``(v, gc, gx, gt, hcc, hcx, hct, hxx, hxt, htt)`` at one point."""
        status, out = self._k.jet(self.ops, self.args, c, x, t)
        if status == 1:
            raise DomainError(f"{format_expr(self.expr)} undefined at c={c!r}, x={x!r}, t={t!r}")
        if status == 2:
            raise NonFiniteResult(f"{format_expr(self.expr)} non-finite at c={c!r}, x={x!r}, t={t!r}")
        return out

    def value(self, c: float, x: float, t: float = 0.0) -> float:
        return self.jet(c, x, t)[0]

    def values(self, c=0.0, x=0.0, t=0.0):
        """Vectorized values; nan where the expression is undefined."""
        return self._k.values(self.ops, self.args, c, x, t)
