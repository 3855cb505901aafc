"""Symbolic expressions in the variables t, x and a dependent variable (v or u).

The kernel is deliberately small: a handful of immutable node types, a
precedence-climbing parser, an exact differentiator, a compiler to Python
closures (which also run on :class:`~pburg.taylor.Taylor` numbers), a canonical
polynomial form used for simplification, and sampling-based zero tests.

Grammar, from lowest to highest precedence::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right associative
    primary := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

Integer literals and ``p/q`` literal ratios are kept as exact fractions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np

from . import taylor
from .errors import DomainError, IndeterminateError, ParseError, UnboundVariableError

Number = Union[Fraction, float]

VARIABLES = ("t", "x", "v", "u")
FUNCTIONS = ("exp", "ln", "sqrt", "abs")


class Expr:
    """Base class of expression nodes.  Nodes are immutable and hashable."""

    __slots__ = ()

    def __str__(self):
        return to_string(self)

    # Operator sugar builds simplified nodes; the parser uses raw constructors.
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)


@dataclass(frozen=True, eq=True, repr=True)
class Const(Expr):
    value: Number

    def __post_init__(self):
        v = self.value
        if isinstance(v, bool) or not isinstance(v, (int, Fraction, float)):
            raise TypeError(f"unsupported constant {v!r}")
        if isinstance(v, int):
            object.__setattr__(self, "value", Fraction(v))
        elif isinstance(v, float) and not math.isfinite(v):
            raise ValueError("constants must be finite")


@dataclass(frozen=True, eq=True, repr=True)
class Var(Expr):
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ValueError(f"unknown variable {self.name!r}")


@dataclass(frozen=True, eq=True, repr=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Pow(Expr):
    base: Expr
    exponent: Const


@dataclass(frozen=True, eq=True, repr=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True, repr=True)
class Func(Expr):
    name: str
    arg: Expr

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(f"unknown function {self.name!r}")


ZERO = Const(0)
ONE = Const(1)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse(value)
    return Const(value)


def children(e: Expr):
    if isinstance(e, (Add, Mul, Div)):
        return (e.left, e.right)
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, (Neg, Func)):
        return (e.arg,)
    return ()


def size(e: Expr) -> int:
    return 1 + sum(size(c) for c in children(e))


@lru_cache(maxsize=4096)
def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    out = frozenset()
    for c in children(e):
        out |= free_vars(c)
    return out


def is_const(e: Expr, value=None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# ---------------------------------------------------------------------------
# lexer and parser

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


@dataclass
class _Token:
    kind: str
    text: str
    offset: int


def _byte_offset(text, pos):
    return len(text[:pos].encode("utf-8"))


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[start]!r}", _byte_offset(text, start))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), _byte_offset(text, start)))
        pos = m.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


@dataclass
class _Parsed:
    node: Expr
    int_literal: bool = False  # came straight from an (optionally negated) integer token
    unsigned: bool = False


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.take()
        if tok.text != text:
            found = tok.text or "end of input"
            raise ParseError(f"expected {text!r}, found {found!r}", tok.offset)
        return tok

    def parse(self):
        if self.peek().kind == "end":
            raise ParseError("empty input", 0)
        node = self.expr().node
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected token {tok.text!r}", tok.offset)
        return node

    def expr(self):
        left = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            right = self.term().node
            node = Add(left.node, right if op == "+" else Neg(right))
            left = _Parsed(node)
        return left

    def term(self):
        left = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            right = self.unary()
            if op == "*":
                left = _Parsed(Mul(left.node, right.node))
            elif left.int_literal and right.int_literal and right.unsigned and right.node.value != 0:
                # p/q literal ratio
                left = _Parsed(Const(left.node.value / right.node.value))
            else:
                left = _Parsed(Div(left.node, right.node))
        return left

    def unary(self):
        if self.peek().text == "-":
            self.take()
            operand = self.unary()
            if isinstance(operand.node, Const) and operand.unsigned:
                return _Parsed(Const(-operand.node.value), operand.int_literal)
            return _Parsed(Neg(operand.node))
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek().text != "^":
            return base
        tok = self.take()
        exponent = _fold_constant(self.unary().node)
        if exponent is None:
            raise ParseError("exponent must be a numeric constant", tok.offset)
        return _Parsed(Pow(base.node, exponent))

    def primary(self):
        tok = self.take()
        if tok.kind == "num":
            if re.fullmatch(r"\d+", tok.text):
                return _Parsed(Const(int(tok.text)), int_literal=True, unsigned=True)
            return _Parsed(Const(float(tok.text)), unsigned=True)
        if tok.kind == "ident":
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr().node
                self.expect(")")
                return _Parsed(Func(tok.text, arg))
            if tok.text in VARIABLES:
                return _Parsed(Var(tok.text))
            raise ParseError(f"unknown identifier {tok.text!r}", tok.offset)
        if tok.text == "(":
            inner = self.expr().node
            self.expect(")")
            return _Parsed(inner)
        found = tok.text or "end of input"
        raise ParseError(f"unexpected {found!r}", tok.offset)


def _fold_constant(e: Expr) -> Optional[Const]:
    """Exact value of a variable-free exponent expression."""
    if isinstance(e, Const):
        return e
    if free_vars(e):
        return None
    try:
        s = fold(e)
    except DomainError:
        return None
    return s if isinstance(s, Const) else None


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    if not isinstance(text, str):
        raise TypeError("parse expects a string")
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# printer

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _const_text(value):
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator), (_PREC_NEG if value < 0 else _PREC_ATOM)
        return f"{value.numerator}/{value.denominator}", _PREC_MUL
    text = repr(float(value))
    return text, (_PREC_NEG if value < 0 or text.startswith("-") else _PREC_ATOM)


def _int_const(e):
    return isinstance(e, Const) and isinstance(e.value, Fraction) and e.value.denominator == 1


def _render(e: Expr):
    """Return (text, precedence) of ``e``."""
    if isinstance(e, Const):
        return _const_text(e.value)
    if isinstance(e, Var):
        return e.name, _PREC_ATOM
    if isinstance(e, Func):
        return f"{e.name}({_render(e.arg)[0]})", _PREC_ATOM
    if isinstance(e, Add):
        left = _wrap(e.left, _PREC_ADD)
        if isinstance(e.right, Neg):
            return f"{left} - {_wrap(e.right.arg, _PREC_MUL)}", _PREC_ADD
        return f"{left} + {_wrap(e.right, _PREC_MUL)}", _PREC_ADD
    if isinstance(e, Mul):
        return f"{_wrap(e.left, _PREC_MUL)}*{_wrap(e.right, _PREC_NEG)}", _PREC_MUL
    if isinstance(e, Div):
        left = _wrap(e.left, _PREC_MUL)
        if _int_const(e.left) and _int_const(e.right) and e.right.value >= 0:
            left = f"({left})"  # keep it from reading as a p/q literal
        return f"{left}/{_wrap(e.right, _PREC_NEG)}", _PREC_MUL
    if isinstance(e, Neg):
        if isinstance(e.arg, Const):
            return f"-({_render(e.arg)[0]})", _PREC_NEG
        return f"-{_wrap(e.arg, _PREC_NEG)}", _PREC_NEG
    if isinstance(e, Pow):
        text, prec = _const_text(e.exponent.value)
        exponent = text if prec >= _PREC_NEG else f"({text})"
        return f"{_wrap(e.base, _PREC_ATOM)}^{exponent}", _PREC_POW
    raise TypeError(f"not an expression: {e!r}")


def _wrap(e, required):
    text, prec = _render(e)
    return text if prec >= required else f"({text})"


def to_string(e: Expr) -> str:
    return _render(e)[0]


# ---------------------------------------------------------------------------
# smart constructors (light local folding)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if is_const(a, 0):
        return b
    if is_const(b, 0):
        return a
    if isinstance(b, Const) and b.value < 0:
        return Add(a, Neg(Const(-b.value)))
    return Add(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if is_const(b, 0):
        return a
    if is_const(a, 0):
        return neg(b)
    if isinstance(b, Neg):
        return add(a, b.arg)
    if isinstance(b, Const) and b.value < 0:
        return Add(a, Const(-b.value))
    return Add(a, Neg(b))


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if is_const(a, 0) or is_const(b, 0):
        return ZERO
    if is_const(a, 1):
        return b
    if is_const(b, 1):
        return a
    if is_const(a, -1):
        return neg(b)
    if is_const(b, -1):
        return neg(a)
    if isinstance(a, Neg) and isinstance(b, Neg):
        return mul(a.arg, b.arg)
    if isinstance(b, Const) and not isinstance(a, Const):
        a, b = b, a
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Const):
        if b.value == 0:
            raise DomainError("division by zero", to_string(Div(a, b)))
        if isinstance(a, Const):
            return Const(a.value / b.value)
        if b.value == 1:
            return a
        if b.value == -1:
            return neg(a)
    if is_const(a, 0):
        return ZERO
    return Div(a, b)


def power(base: Expr, exponent) -> Expr:
    exponent = exponent if isinstance(exponent, Const) else Const(exponent)
    p = exponent.value
    if p == 0:
        return ONE
    if p == 1:
        return base
    if isinstance(base, Const):
        folded = _const_pow(base.value, p)
        if folded is not None:
            return Const(folded)
    if isinstance(base, Pow) and _is_int(p) and _is_int(base.exponent.value):
        return Pow(base.base, Const(base.exponent.value * p))
    return Pow(base, exponent)


def _is_int(p):
    return isinstance(p, Fraction) and p.denominator == 1


def _const_pow(b, p):
    if _is_int(p):
        if b == 0 and p < 0:
            raise DomainError("zero raised to a negative power")
        if isinstance(b, Fraction):
            return b ** int(p)
        return float(b) ** int(p)
    if b < 0:
        return None
    if isinstance(b, Fraction) and isinstance(p, Fraction):
        num = _exact_root(b.numerator, p.denominator)
        den = _exact_root(b.denominator, p.denominator)
        if num is not None and den is not None:
            return Fraction(num, den) ** p.numerator
        return None
    return None


def _exact_root(n, k):
    r = round(n ** (1.0 / k))
    for cand in (r - 1, r, r + 1):
        if cand >= 0 and cand**k == n:
            return cand
    return None


def func(name: str, arg: Expr) -> Expr:
    if isinstance(arg, Const):
        v = arg.value
        if name == "exp" and v == 0:
            return ONE
        if name == "ln" and v == 1:
            return ZERO
        if name == "abs":
            return Const(abs(v))
        if name == "sqrt" and isinstance(v, Fraction) and v >= 0:
            root = _const_pow(v, Fraction(1, 2))
            if root is not None:
                return Const(root)
    return Func(name, arg)


def exp(a):
    return func("exp", as_expr(a))


def ln(a):
    return func("ln", as_expr(a))


def sqrt(a):
    return func("sqrt", as_expr(a))


def absolute(a):
    return func("abs", as_expr(a))


def fold(e: Expr) -> Expr:
    """Bottom-up rebuild through the smart constructors."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Add):
        return add(fold(e.left), fold(e.right))
    if isinstance(e, Mul):
        return mul(fold(e.left), fold(e.right))
    if isinstance(e, Div):
        return div(fold(e.left), fold(e.right))
    if isinstance(e, Neg):
        return neg(fold(e.arg))
    if isinstance(e, Pow):
        return power(fold(e.base), e.exponent)
    if isinstance(e, Func):
        return func(e.name, fold(e.arg))
    raise TypeError(e)


def substitute(e: Expr, mapping: dict) -> Expr:
    """Replace variables by expressions (keys are variable names)."""
    if isinstance(e, Var):
        return as_expr(mapping[e.name]) if e.name in mapping else e
    if isinstance(e, Const):
        return e
    if isinstance(e, Add):
        return add(substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Mul):
        return mul(substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Div):
        return div(substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Neg):
        return neg(substitute(e.arg, mapping))
    if isinstance(e, Pow):
        return power(substitute(e.base, mapping), e.exponent)
    return func(e.name, substitute(e.arg, mapping))


# ---------------------------------------------------------------------------
# differentiation


def _matches(name, var):
    return name == var or (var == "w" and name in ("v", "u"))


@lru_cache(maxsize=8192)
def differentiate(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e``; ``var`` is t, x, v, u or w (= v or u)."""
    if var not in ("t", "x", "v", "u", "w"):
        raise ValueError(f"unknown variable {var!r}")
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if _matches(e.name, var) else ZERO
    if not any(_matches(n, var) for n in free_vars(e)):
        return ZERO
    if isinstance(e, Add):
        return add(differentiate(e.left, var), differentiate(e.right, var))
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, Mul):
        da, db = differentiate(e.left, var), differentiate(e.right, var)
        return add(mul(da, e.right), mul(e.left, db))
    if isinstance(e, Div):
        da, db = differentiate(e.left, var), differentiate(e.right, var)
        if is_const(db, 0):
            return div(da, e.right)
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, 2))
    if isinstance(e, Pow):
        p = e.exponent.value
        return mul(mul(Const(p), power(e.base, p - 1)), differentiate(e.base, var))
    inner = differentiate(e.arg, var)
    if e.name == "exp":
        return mul(e, inner)
    if e.name == "ln":
        if isinstance(e.arg, Func) and e.arg.name == "abs":
            y = e.arg.arg
            return div(differentiate(y, var), y)
        return div(inner, e.arg)
    if e.name == "sqrt":
        return div(inner, mul(Const(2), e))
    # abs: d|y| = y'|y|/y, valid off y = 0
    return div(mul(e.arg, inner), e)


def derivative(e: Expr, *variables: str) -> Expr:
    for var in variables:
        e = differentiate(e, var)
    return e


# ---------------------------------------------------------------------------
# evaluation

CompiledFn = Callable[..., object]


def _check_nonzero(value, node):
    if taylor.value_of(value) == 0.0:
        raise DomainError("division by zero", to_string(node))


@lru_cache(maxsize=4096)
def compile_expr(e: Expr) -> CompiledFn:
    """Compile to ``fn(t, x, w)``; works on floats and Taylor numbers."""
    if isinstance(e, Const):
        c = float(e.value)
        return lambda t, x, w: c
    if isinstance(e, Var):
        if e.name == "t":
            return lambda t, x, w: t
        if e.name == "x":
            return lambda t, x, w: x
        return lambda t, x, w: w
    if isinstance(e, Add):
        fa, fb = compile_expr(e.left), compile_expr(e.right)
        return lambda t, x, w: fa(t, x, w) + fb(t, x, w)
    if isinstance(e, Mul):
        fa, fb = compile_expr(e.left), compile_expr(e.right)
        return lambda t, x, w: fa(t, x, w) * fb(t, x, w)
    if isinstance(e, Neg):
        fa = compile_expr(e.arg)
        return lambda t, x, w: -fa(t, x, w)
    if isinstance(e, Div):
        fa, fb = compile_expr(e.left), compile_expr(e.right)

        def _div(t, x, w):
            den = fb(t, x, w)
            _check_nonzero(den, e)
            return fa(t, x, w) / den

        return _div
    if isinstance(e, Pow):
        fb = compile_expr(e.base)
        p = e.exponent.value
        p = int(p) if _is_int(p) else float(p)

        def _pow(t, x, w):
            try:
                return taylor.power(fb(t, x, w), p)
            except DomainError as err:
                raise DomainError(str(err), to_string(e)) from None
            except OverflowError:
                raise DomainError("overflow", to_string(e)) from None

        return _pow
    fa = compile_expr(e.arg)
    impl = {"exp": taylor.exp, "ln": taylor.log, "sqrt": taylor.sqrt, "abs": taylor.fabs}[e.name]

    def _func(t, x, w):
        try:
            return impl(fa(t, x, w))
        except DomainError as err:
            raise DomainError(f"{e.name} domain violation", to_string(e)) from err

    return _func


def _binding(bindings, name):
    if name in bindings:
        return bindings[name]
    if name in ("v", "u") and "w" in bindings:
        return bindings["w"]
    if name == "w":
        for alt in ("v", "u"):
            if alt in bindings:
                return bindings[alt]
    raise UnboundVariableError(f"variable {name!r} is not bound")


def evaluate(e: Expr, bindings: dict):
    """Value of ``e`` at the point given by ``bindings`` (keys t, x, v/u/w)."""
    args = []
    used = free_vars(e)
    for name in ("t", "x", "w"):
        needed = name in used or (name == "w" and ({"v", "u"} & used))
        args.append(_binding(bindings, name) if needed else 0.0)
    value = compile_expr(e)(*args)
    return float(value) if not isinstance(value, taylor.Taylor) else value


# ---------------------------------------------------------------------------
# canonical polynomial form over atoms

_MAX_TERMS = 200


class _TooBig(Exception):
    pass


@dataclass
class Poly:
    """Sum of coefficient * product(atom ** integer exponent)."""

    terms: dict = field(default_factory=dict)  # monomial -> coefficient
    atoms: dict = field(default_factory=dict)  # key -> Expr

    @staticmethod
    def constant(c):
        return Poly({(): c} if c != 0 else {}, {})

    @staticmethod
    def atom(e: Expr, exponent=1):
        key = to_string(e)
        return Poly({((key, exponent),): Fraction(1)}, {key: e})

    def copy(self):
        return Poly(dict(self.terms), dict(self.atoms))

    def __add__(self, other):
        out = self.copy()
        out.atoms.update(other.atoms)
        for mono, c in other.terms.items():
            s = out.terms.get(mono, 0) + c
            if s == 0:
                out.terms.pop(mono, None)
            else:
                out.terms[mono] = s
        return out

    def scale(self, c):
        if c == 0:
            return Poly({}, {})
        return Poly({m: v * c for m, v in self.terms.items()}, dict(self.atoms))

    def __mul__(self, other):
        out = Poly({}, {**self.atoms, **other.atoms})
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                mono = _mono_mul(m1, m2)
                s = out.terms.get(mono, 0) + c1 * c2
                if s == 0:
                    out.terms.pop(mono, None)
                else:
                    out.terms[mono] = s
        if len(out.terms) > _MAX_TERMS:
            raise _TooBig
        return out

    def single(self):
        return len(self.terms) == 1

    def inverse_monomial(self):
        ((mono, c),) = self.terms.items()
        return Poly({tuple((k, -p) for k, p in mono): 1 / c}, dict(self.atoms))

    def as_const(self):
        if not self.terms:
            return Fraction(0)
        if len(self.terms) == 1 and () in self.terms:
            return self.terms[()]
        return None


def _mono_mul(m1, m2):
    d = dict(m1)
    for k, p in m2:
        d[k] = d.get(k, 0) + p
        if d[k] == 0:
            del d[k]
    return tuple(sorted(d.items()))


def to_poly(e: Expr) -> Poly:
    """Expand ``e`` into canonical polynomial form over non-polynomial atoms."""
    if isinstance(e, Const):
        return Poly.constant(e.value)
    if isinstance(e, Var):
        return Poly.atom(e)
    if isinstance(e, Add):
        return to_poly(e.left) + to_poly(e.right)
    if isinstance(e, Neg):
        return to_poly(e.arg).scale(-1)
    if isinstance(e, Mul):
        a, b = to_poly(e.left), to_poly(e.right)
        try:
            return a * b
        except _TooBig:
            return Poly.atom(_opaque(e))
    if isinstance(e, Div):
        a, b = to_poly(e.left), to_poly(e.right)
        c = b.as_const()
        if c is not None:
            if c == 0:
                raise DomainError("division by zero", to_string(e))
            return a.scale(1 / c)
        if b.single():
            return a * b.inverse_monomial()
        return a * Poly.atom(from_poly(b), -1)
    if isinstance(e, Pow):
        p = e.exponent.value
        b = to_poly(e.base)
        if _is_int(p):
            n = int(p)
            c = b.as_const()
            if c is not None:
                return Poly.constant(_const_pow(c, p))
            if b.single():
                ((mono, coeff),) = b.terms.items()
                scaled = tuple((k, q * n) for k, q in mono)
                return Poly({scaled: coeff**n}, dict(b.atoms))
            if n > 0:
                try:
                    out = Poly.constant(Fraction(1))
                    for _ in range(n):
                        out = out * b
                    return out
                except _TooBig:
                    return Poly.atom(from_poly(b), n)
            return Poly.atom(from_poly(b), n)
        base = from_poly(b)
        c = b.as_const()
        if c is not None:
            folded = _const_pow(c, p)
            if folded is not None:
                return Poly.constant(folded)
        return Poly.atom(Pow(base, e.exponent))
    arg = simplify(e.arg)
    folded = func(e.name, arg)
    if isinstance(folded, Const):
        return Poly.constant(folded.value)
    return Poly.atom(folded)


def _opaque(e):
    return fold(e)


def _mono_key(item):
    mono, _ = item
    degree = sum(abs(p) for _, p in mono)
    return (degree, [(k, p) for k, p in mono])


def from_poly(p: Poly) -> Expr:
    """Rebuild an expression from canonical polynomial form (deterministic order)."""
    if not p.terms:
        return ZERO
    result = None
    for mono, c in sorted(p.terms.items(), key=_mono_key):
        numer, denom = [], []
        for key, q in mono:
            atom = p.atoms[key]
            (numer if q > 0 else denom).append(power(atom, abs(q)))
        body = None
        for f in numer:
            body = f if body is None else Mul(body, f)
        if denom:
            den = None
            for f in denom:
                den = f if den is None else Mul(den, f)
            body = Div(body if body is not None else ONE, den)
        negative = c < 0
        mag = -c if negative else c
        if body is None:
            term = Const(mag)
        elif mag == 1:
            term = body
        else:
            term = Mul(Const(mag), body)
        if result is None:
            result = neg(term) if negative else term
        elif negative:
            result = Add(result, Neg(term))
        else:
            result = Add(result, term)
    return result


def simplify(e: Expr) -> Expr:
    """Constant folding, 0/1 identities and like-term collection.

    Returns whichever of the locally folded tree and the canonical polynomial
    rebuild is smaller, so the result never grows.  No rewrite that changes
    the domain (such as exp(ln(y)) -> y) is performed.
    """
    folded = fold(e)
    try:
        canon = from_poly(to_poly(e))
    except DomainError:
        return folded
    candidates = [(size(folded), 0, folded), (size(canon), 1, canon)]
    best = min(candidates, key=lambda c: (c[0], c[1]))[2]
    return best if size(best) <= size(e) else e


def poly_in(e: Expr, var: str) -> Optional[dict]:
    """Coefficients {k: Expr free of var} if ``e`` is polynomial in ``var``."""
    p = to_poly(e)
    groups: dict = {}
    for mono, c in p.terms.items():
        k = 0
        rest = []
        for key, q in mono:
            if key == var:
                if q < 0:
                    return None
                k = q
            elif var in free_vars(p.atoms[key]):
                return None
            else:
                rest.append((key, q))
        sub_poly = groups.setdefault(k, Poly({}, p.atoms))
        sub_poly.terms[tuple(rest)] = sub_poly.terms.get(tuple(rest), 0) + c
    return {k: from_poly(Poly({m: c for m, c in g.terms.items() if c != 0}, g.atoms)) for k, g in groups.items()}


# ---------------------------------------------------------------------------
# sampling-based tests


@dataclass(frozen=True)
class SampleBox:
    """Axis-aligned sampling region with an optional exclusion predicate.

    ``intervals`` maps variable names (t, x, w) to closed intervals; variables
    not listed default to [-1, 1].  ``exclude(t, x, w)`` returning True drops
    a sample point.
    """

    intervals: tuple = (("t", (0.1, 1.0)), ("x", (-1.0, 1.0)), ("w", (-1.0, 1.0)))
    n: int = 50
    seed: int = 0
    exclude: Optional[Callable] = None

    def __post_init__(self):
        if isinstance(self.intervals, dict):
            object.__setattr__(self, "intervals", tuple(sorted(self.intervals.items())))
        for name, (lo, hi) in self.intervals:
            if not hi > lo:
                raise ValueError(f"interval for {name} must have positive length")
        if self.n < 1:
            raise ValueError("sample count must be at least 1")

    @classmethod
    def of(cls, t=(0.1, 1.0), x=(-1.0, 1.0), w=(-1.0, 1.0), n=50, seed=0, exclude=None):
        return cls((("t", tuple(t)), ("w", tuple(w)), ("x", tuple(x))), n, seed, exclude)

    def interval(self, name):
        return dict(self.intervals).get(name, (-1.0, 1.0))

    def replace(self, **changes):
        fields = {"intervals": self.intervals, "n": self.n, "seed": self.seed, "exclude": self.exclude}
        fields.update(changes)
        return SampleBox(**fields)

    def points(self, n=None, seed=None, margin=0.0):
        """Deterministic sample points as a list of (t, x, w) tuples."""
        n = self.n if n is None else n
        rng = np.random.default_rng(self.seed if seed is None else seed)
        cols = []
        for name in ("t", "x", "w"):
            lo, hi = self.interval(name)
            pad = margin * (hi - lo)
            cols.append(rng.uniform(lo + pad, hi - pad, size=n))
        out = []
        for t, x, w in zip(*cols):
            p = (float(t), float(x), float(w))
            if self.exclude is not None and self.exclude(*p):
                continue
            out.append(p)
        return out


DEFAULT_ZERO_TOL = 1e-10
_HARD_ZERO_CAP = 1e-6


def _addends(e: Expr):
    if isinstance(e, Add):
        return _addends(e.left) + _addends(e.right)
    if isinstance(e, Neg):
        return _addends(e.arg)
    return [e]


def probably_zero(e: Expr, box: SampleBox, tol: float = DEFAULT_ZERO_TOL) -> bool:
    """Randomized zero test: structural first, then ``box.n`` samples.

    This is probabilistically sound, not a proof.  Raises
    :class:`IndeterminateError` when more than half of the samples fall
    outside the domain of ``e``.
    """
    s = simplify(e)
    if isinstance(s, Const):
        return s.value == 0
    fn = compile_expr(s)
    addends = _addends(s)
    parts = [compile_expr(a) for a in addends] if len(addends) > 1 else []
    failures = 0
    points = box.points()
    for t, x, w in points:
        try:
            value = fn(t, x, w)
            scale = max((abs(p(t, x, w)) for p in parts), default=0.0)
        except DomainError:
            failures += 1
            continue
        if not math.isfinite(value):
            failures += 1
            continue
        if abs(value) > min(tol * (1.0 + scale), _HARD_ZERO_CAP):
            return False
    if failures * 2 > len(points) or not points:
        raise IndeterminateError(f"{failures} of {len(points)} samples outside the domain of {to_string(s)}")
    return True


def as_constant(e: Expr, variables, box: SampleBox, tol: float = DEFAULT_ZERO_TOL):
    """The constant value of ``e`` if it does not depend on ``variables``, else None."""
    s = simplify(e)
    if isinstance(s, Const):
        return s.value
    for var in variables:
        if not probably_zero(differentiate(s, var), box, tol):
            return None
    fn = compile_expr(s)
    for t, x, w in box.points():
        try:
            return float(fn(t, x, w))
        except DomainError:
            continue
    raise IndeterminateError(f"no sample point inside the domain of {to_string(s)}")
