"""Scalar expressions in ``x, u1..um``: parsing, evaluation, symbolic ``d/du_i``.

The grammar is deliberately small::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' int)*
    atom   := number | 'x' | 'u'<k> | 'pi' | func '(' expr ')' | '(' expr ')'
            | 'bump' '(' const ',' expr ')' | 'dbump' '(' const ',' expr ',' int ')'

``func`` is one of ``sin, cos, exp, tanh``.  ``bump(r, s)`` is a C-infinity
cutoff equal to 1 for ``|s| <= r`` and 0 for ``|s| >= 2r``; ``dbump(r, s, k)``
is its k-th derivative with respect to ``s`` and is what :func:`diff_u`
produces when it differentiates a bump.

Trees are immutable and evaluation is vectorised: ``x`` and every ``u_i`` may
be numpy arrays of a common broadcastable shape.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Pow",
    "Bump",
    "ParseError",
    "EvaluationError",
    "parse",
    "evaluate",
    "diff_u",
    "to_string",
    "substitute",
    "max_u_index",
    "smoothstep",
    "lambdify",
]

UNARY_FUNCS = ("sin", "cos", "exp", "tanh")


class ParseError(ValueError):
    """Raised for malformed expression text; ``position`` is a 0-based offset."""

    def __init__(self, position: int, message: str):
        super().__init__(f"{message} (at offset {position})")
        self.position = position
        self.message = message


class EvaluationError(ArithmeticError):
    """Domain error during evaluation (division by zero)."""


# ---------------------------------------------------------------------------
# Tree nodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Var:
    """``index == 0`` is ``x``; ``index == i >= 1`` is ``u_i``."""

    index: int

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Unary:
    op: str  # 'neg' or one of UNARY_FUNCS
    arg: "Expr"

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Binary:
    op: str  # 'add', 'sub', 'mul', 'div'
    left: "Expr"
    right: "Expr"

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Bump:
    radius: float
    arg: "Expr"
    order: int = 0

    def __str__(self):
        return to_string(self)


Expr = Union[Const, Var, Unary, Binary, Pow, Bump]

ZERO = Const(0.0)
ONE = Const(1.0)


# ---------------------------------------------------------------------------
# Smart constructors (constant folding only)
# ---------------------------------------------------------------------------


def _is(e, value):
    return isinstance(e, Const) and e.value == value


def const(value) -> Const:
    return Const(float(value))


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return Binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is(b, 1.0):
        return a
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    return Binary("div", a, b)


def power(a: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const) and (a.value != 0.0 or n > 0):
        return Const(a.value ** n)
    return Pow(a, n)


def func(op: str, a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(float(_UFUNCS[op](a.value)))
    return Unary(op, a)


def bump(radius: float, a: Expr, order: int = 0) -> Expr:
    if isinstance(a, Const):
        return Const(float(_bump_eval(radius, np.float64(a.value), order)))
    return Bump(float(radius), a, order)


def linear_combination(coeffs: Sequence[float], terms: Sequence[Expr]) -> Expr:
    """``sum_k coeffs[k] * terms[k]`` with zero coefficients dropped."""
    out: Expr = ZERO
    for c, t in zip(coeffs, terms):
        out = add(out, mul(const(c), t))
    return out


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(src: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ParseError(pos, f"unexpected character {src[pos]!r}")
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, m: int):
        self.src = src
        self.m = m
        self.tokens = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Token:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise ParseError(self.tok.pos, f"expected {text!r}, found {found!r}")
        return self.advance()

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            raise ParseError(self.tok.pos, f"unexpected token {self.tok.text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self) -> Expr:
        if self.tok.text == "-":
            self.advance()
            return neg(self.unary())
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        while self.tok.text == "^":
            self.advance()
            e = power(e, self.integer_exponent())
        return e

    def integer_exponent(self) -> int:
        start = self.tok.pos
        paren = self.tok.text == "("
        if paren:
            self.advance()
        sign = 1
        while self.tok.text in ("-", "+"):
            if self.advance().text == "-":
                sign = -sign
        tok = self.tok
        if tok.kind != "num":
            raise ParseError(tok.pos, "exponent must be an integer literal")
        value = float(tok.text)
        if not value.is_integer() or not re.fullmatch(r"\d+", tok.text):
            raise ParseError(start, f"non-integer exponent {tok.text!r}")
        self.advance()
        if paren:
            self.expect(")")
        return sign * int(tok.text)

    def constant_arg(self) -> float:
        start = self.tok.pos
        e = self.expr()
        if not isinstance(e, Const):
            raise ParseError(start, "expected a constant expression")
        return e.value

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text))
        if tok.text == "(":
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind == "name":
            self.advance()
            name = tok.text
            if name == "x":
                return Var(0)
            if name == "pi":
                return Const(math.pi)
            if re.fullmatch(r"u\d+", name):
                k = int(name[1:])
                if not 1 <= k <= self.m:
                    raise ParseError(tok.pos, f"variable {name} out of range for m={self.m}")
                return Var(k)
            if name in UNARY_FUNCS:
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return func(name, e)
            if name in ("bump", "dbump"):
                self.expect("(")
                rpos = self.tok.pos
                r = self.constant_arg()
                if not r > 0:
                    raise ParseError(rpos, "bump radius must be positive")
                self.expect(",")
                s = self.expr()
                order = 0
                if name == "dbump":
                    self.expect(",")
                    order = self.integer_exponent()
                    if order < 0:
                        raise ParseError(rpos, "dbump order must be non-negative")
                self.expect(")")
                return bump(r, s, order)
            raise ParseError(tok.pos, f"unknown identifier {name!r}")
        found = tok.text or "end of input"
        raise ParseError(tok.pos, f"unexpected {found!r}")


def parse(src: str, m: int) -> Expr:
    """Parse ``src`` into an expression over ``x, u1..um``.

    >>> to_string(parse("u1*u2 + sin(x)", 2))
    'u1 * u2 + sin(x)'
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not src.isascii():
        bad = next(i for i, ch in enumerate(src) if not ch.isascii())
        raise ParseError(bad, "non-ASCII character")
    return _Parser(src, m).parse()


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}
_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return 3
    if isinstance(e, Const) and (e.value < 0 or not math.isfinite(e.value)):
        return 3
    if isinstance(e, Pow):
        return 4
    return 5


def _fmt_const(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"cannot print non-finite constant {v}")
    if v == math.pi:
        return "pi"
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_string(e: Expr) -> str:
    """Render ``e`` in the input syntax; ``parse(to_string(e))`` is equivalent."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return "x" if e.index == 0 else f"u{e.index}"
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_string(e.arg)
            return f"-{inner}" if _prec(e.arg) >= 4 else f"-({inner})"
        return f"{e.op}({to_string(e.arg)})"
    if isinstance(e, Pow):
        inner = to_string(e.base)
        if _prec(e.base) < 5:
            inner = f"({inner})"
        return f"{inner}^{e.exponent}" if e.exponent >= 0 else f"{inner}^({e.exponent})"
    if isinstance(e, Bump):
        r = _fmt_const(e.radius)
        if e.order == 0:
            return f"bump({r}, {to_string(e.arg)})"
        return f"dbump({r}, {to_string(e.arg)}, {e.order})"
    if isinstance(e, Binary):
        p = _PREC[e.op]
        lhs = to_string(e.left)
        if _prec(e.left) < p:
            lhs = f"({lhs})"
        rhs = to_string(e.right)
        # right operand of a left-associative op needs parens at equal precedence
        if _prec(e.right) <= p:
            rhs = f"({rhs})"
        return f"{lhs} {_SYM[e.op]} {rhs}"
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_UFUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}

# below this distance from {0, 1} every derivative of the smoothstep is < 1e-300
_SMOOTH_EDGE = 1e-3


def smoothstep(t, order: int = 0):
    """C-infinity step ``S(t) = psi(t) / (psi(t) + psi(1 - t))``, ``psi(t) = exp(-1/t)``.

    Returns the ``order``-th derivative, computed by truncated Taylor-series
    arithmetic so every order is exact up to rounding.
    """
    t = np.asarray(t, dtype=float)
    if order == 0:
        # plateau values stay exact: 1 for t >= 1 and 0 for t <= 0
        inside = (t > 0.0) & (t < 1.0)
        out = np.zeros_like(t)
        out[t >= 1.0] = 1.0
        if np.any(inside):
            ti = t[inside]
            a = np.exp(-1.0 / ti)
            b = np.exp(-1.0 / (1.0 - ti))
            out[inside] = a / (a + b)
        return out
    out = np.zeros_like(t)
    inside = (t > _SMOOTH_EDGE) & (t < 1.0 - _SMOOTH_EDGE)
    if not np.any(inside):
        return out
    t0 = t[inside]
    K = order
    n = np.arange(K + 1)[:, None]
    sign = np.where(n % 2 == 0, 1.0, -1.0)
    p = -sign / t0[None, :] ** (n + 1)
    q = -1.0 / (1.0 - t0[None, :]) ** (n + 1)
    a = _series_exp(p)
    b = _series_exp(q)
    c = a + b
    s = np.empty_like(a)
    for k in range(K + 1):
        acc = a[k].copy()
        for j in range(1, k + 1):
            acc -= c[j] * s[k - j]
        s[k] = acc / c[0]
    out[inside] = math.factorial(K) * s[K]
    return out


def _series_exp(p):
    """Taylor coefficients of exp(P(h)) given those of P (rows = orders)."""
    K = p.shape[0] - 1
    e = np.empty_like(p)
    e[0] = np.exp(p[0])
    for k in range(1, K + 1):
        acc = np.zeros_like(p[0])
        for j in range(1, k + 1):
            acc += j * p[j] * e[k - j]
        e[k] = acc / k
    return e


def _bump_eval(radius: float, s, order: int):
    s = np.asarray(s, dtype=float)
    t = (2.0 * radius - np.abs(s)) / radius
    val = smoothstep(t, order)
    if order:
        val = val * (-np.sign(s) / radius) ** order
    return val


def evaluate(e: Expr, x, u: Sequence = ()):
    """Evaluate ``e`` at ``x`` and ``u = (u1, ..., um)``.

    Inputs may be scalars or numpy arrays; the result broadcasts accordingly.
    Raises :class:`EvaluationError` on division by zero.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _eval(e, x, u)


def _eval(e, x, u):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.index == 0:
            return x
        if e.index > len(u):
            raise IndexError(f"u{e.index} requested but only {len(u)} components given")
        return u[e.index - 1]
    if isinstance(e, Binary):
        a = _eval(e.left, x, u)
        b = _eval(e.right, x, u)
        if e.op == "add":
            return a + b
        if e.op == "sub":
            return a - b
        if e.op == "mul":
            return a * b
        if np.any(np.asarray(b) == 0):
            raise EvaluationError("division by zero")
        return a / b
    if isinstance(e, Unary):
        a = _eval(e.arg, x, u)
        if e.op == "neg":
            return -a
        return _UFUNCS[e.op](a)
    if isinstance(e, Pow):
        a = _eval(e.base, x, u)
        if e.exponent < 0:
            if np.any(np.asarray(a) == 0):
                raise EvaluationError("division by zero")
            return 1.0 / np.asarray(a, dtype=float) ** (-e.exponent)
        return a ** e.exponent
    if isinstance(e, Bump):
        out = _bump_eval(e.radius, _eval(e.arg, x, u), e.order)
        return out if out.ndim else float(out)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Symbolic differentiation and substitution
# ---------------------------------------------------------------------------


def diff_u(e: Expr, i: int) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to ``u_i`` (i >= 1)."""
    if i < 1:
        raise ValueError("u index must be >= 1")
    return _diff(e, i)


def _diff(e, i):
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == i else ZERO
    if isinstance(e, Binary):
        a, b = e.left, e.right
        da, db = _diff(a, i), _diff(b, i)
        if e.op == "add":
            return add(da, db)
        if e.op == "sub":
            return sub(da, db)
        if e.op == "mul":
            return add(mul(da, b), mul(a, db))
        # quotient rule
        return div(sub(mul(da, b), mul(a, db)), power(b, 2))
    if isinstance(e, Unary):
        da = _diff(e.arg, i)
        if _is(da, 0.0):
            return ZERO
        a = e.arg
        if e.op == "neg":
            return neg(da)
        if e.op == "sin":
            return mul(func("cos", a), da)
        if e.op == "cos":
            return neg(mul(func("sin", a), da))
        if e.op == "exp":
            return mul(e, da)
        if e.op == "tanh":
            return mul(sub(ONE, power(e, 2)), da)
    if isinstance(e, Pow):
        da = _diff(e.base, i)
        if _is(da, 0.0):
            return ZERO
        n = e.exponent
        return mul(mul(const(n), power(e.base, n - 1)), da)
    if isinstance(e, Bump):
        da = _diff(e.arg, i)
        if _is(da, 0.0):
            return ZERO
        return mul(bump(e.radius, e.arg, e.order + 1), da)
    raise TypeError(f"not an expression: {e!r}")


def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Replace ``Var(k)`` by ``mapping[k]`` wherever ``k`` is a key."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.index, e)
    if isinstance(e, Binary):
        a, b = substitute(e.left, mapping), substitute(e.right, mapping)
        return {"add": add, "sub": sub, "mul": mul, "div": div}[e.op](a, b)
    if isinstance(e, Unary):
        a = substitute(e.arg, mapping)
        return neg(a) if e.op == "neg" else func(e.op, a)
    if isinstance(e, Pow):
        return power(substitute(e.base, mapping), e.exponent)
    if isinstance(e, Bump):
        return bump(e.radius, substitute(e.arg, mapping), e.order)
    raise TypeError(f"not an expression: {e!r}")


def max_u_index(e: Expr) -> int:
    """Largest ``k`` such that ``u_k`` occurs in ``e`` (0 if none)."""
    if isinstance(e, Var):
        return e.index
    if isinstance(e, Const):
        return 0
    if isinstance(e, Binary):
        return max(max_u_index(e.left), max_u_index(e.right))
    if isinstance(e, Pow):
        return max_u_index(e.base)
    return max_u_index(e.arg)


# ---------------------------------------------------------------------------
# Compilation to a numpy callable
# ---------------------------------------------------------------------------


def _checked_div(a, b):
    if np.any(np.asarray(b) == 0):
        raise EvaluationError("division by zero")
    return a / b


def _checked_inv_pow(a, n):
    if np.any(np.asarray(a) == 0):
        raise EvaluationError("division by zero")
    return 1.0 / np.asarray(a, dtype=float) ** n


_LAMBDIFY_ENV = {
    "np": np,
    "_div": _checked_div,
    "_ipow": _checked_inv_pow,
    "_bump": _bump_eval,
}


def _code(e) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return "x" if e.index == 0 else f"u[{e.index - 1}]"
    if isinstance(e, Binary):
        a, b = _code(e.left), _code(e.right)
        if e.op == "div":
            return f"_div({a}, {b})"
        return f"({a} {_SYM[e.op]} {b})"
    if isinstance(e, Unary):
        a = _code(e.arg)
        return f"(-{a})" if e.op == "neg" else f"np.{e.op}({a})"
    if isinstance(e, Pow):
        a = _code(e.base)
        if e.exponent < 0:
            return f"_ipow({a}, {-e.exponent})"
        return f"({a} ** {e.exponent})"
    if isinstance(e, Bump):
        return f"_bump({e.radius!r}, {_code(e.arg)}, {e.order})"
    raise TypeError(f"not an expression: {e!r}")


def lambdify(e: Expr):
    """Compile ``e`` into ``fn(x, u)`` with the same semantics as :func:`evaluate`."""
    src = f"lambda x, u: {_code(e)}"
    fn = eval(compile(src, "<findim-expr>", "eval"), dict(_LAMBDIFY_ENV))

    def call(x, u=()):
        with np.errstate(over="ignore", invalid="ignore"):
            return fn(x, u)

    call.source = src
    return call
