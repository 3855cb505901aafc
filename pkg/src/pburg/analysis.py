"""Fixed antiderivatives of functions of t.

Every integral with respect to t is a *fixed* antiderivative with an explicit
base point ``t0`` (default 0), so ``A(t0) == 0``.  Polynomial integrands and
sums of polynomial * exp(affine) terms are integrated in closed form;
anything else uses adaptive Gauss-Kronrod quadrature (QUADPACK) on a cached
grid of panels, so repeated evaluation costs one partial-panel integral.

Derivatives are never obtained by differentiating quadrature output: the
derivative of an antiderivative is its integrand, and higher derivatives come
from evaluating the integrand on Taylor numbers.
"""

from __future__ import annotations

import math
import threading
import warnings
from fractions import Fraction
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate

from . import expr as ex
from .errors import DomainError, QuadratureError
from .taylor import Taylor, exp as t_exp

DEFAULT_TOL = 1e-10
DEFAULT_PANEL = 0.25
_VALUE_CACHE = 1 << 16


class TimeFunction:
    """A function of t usable on floats and Taylor numbers, optionally with an Expr form.

    Arithmetic keeps the symbolic form whenever both operands have one, which
    lets closed-form integration kick in further down a chain of constructions.
    """

    __slots__ = ("fn", "expr")

    def __init__(self, fn: Optional[Callable] = None, expr: Optional[ex.Expr] = None):
        if fn is None and expr is None:
            raise ValueError("need a callable or an expression")
        if expr is not None:
            extra = ex.free_vars(expr) - {"t"}
            if extra:
                raise ValueError(f"expected a function of t only, found {sorted(extra)}")
            if fn is None:
                compiled = ex.compile_expr(expr)
                fn = lambda t: compiled(t, 0.0, 0.0)  # noqa: E731
        self.fn = fn
        self.expr = expr

    @classmethod
    def lift(cls, value) -> "TimeFunction":
        if isinstance(value, TimeFunction):
            return value
        if isinstance(value, ex.Expr):
            return cls(expr=value)
        if isinstance(value, (int, float, Fraction)):
            return cls(expr=ex.Const(value))
        if callable(value):
            return cls(fn=value)
        raise TypeError(f"cannot make a function of t from {value!r}")

    def __call__(self, t):
        return self.fn(t)

    def is_zero(self):
        return self.expr is not None and ex.is_const(ex.simplify(self.expr), 0)

    def _binary(self, other, sym, op):
        other = TimeFunction.lift(other)
        e = sym(self.expr, other.expr) if self.expr is not None and other.expr is not None else None
        f, g = self.fn, other.fn
        return TimeFunction(fn=lambda t: op(f(t), g(t)), expr=e) if e is None else TimeFunction(expr=e)

    def __add__(self, other):
        return self._binary(other, ex.add, lambda a, b: a + b)

    def __radd__(self, other):
        return TimeFunction.lift(other) + self

    def __sub__(self, other):
        return self._binary(other, ex.sub, lambda a, b: a - b)

    def __rsub__(self, other):
        return TimeFunction.lift(other) - self

    def __mul__(self, other):
        return self._binary(other, ex.mul, lambda a, b: a * b)

    def __rmul__(self, other):
        return TimeFunction.lift(other) * self

    def __truediv__(self, other):
        return self._binary(other, ex.div, lambda a, b: a / b)

    def __rtruediv__(self, other):
        return TimeFunction.lift(other) / self

    def __neg__(self):
        if self.expr is not None:
            return TimeFunction(expr=ex.neg(self.expr))
        f = self.fn
        return TimeFunction(fn=lambda t: -f(t))

    def __pow__(self, n):
        if self.expr is not None:
            return TimeFunction(expr=ex.power(self.expr, n))
        f = self.fn
        return TimeFunction(fn=lambda t: f(t) ** n)

    def __repr__(self):
        return f"TimeFunction({ex.to_string(self.expr)})" if self.expr is not None else "TimeFunction(<numeric>)"


# ---------------------------------------------------------------------------
# closed-form integration


def _affine(arg: ex.Expr):
    coeffs = ex.poly_in(arg, "t")
    if coeffs is None or any(k > 1 for k in coeffs):
        return None
    out = []
    for k in (1, 0):
        c = ex.simplify(coeffs.get(k, ex.ZERO))
        if not isinstance(c, ex.Const):
            return None
        out.append(c.value)
    return tuple(out)


def _poly_expr(coeffs: dict) -> ex.Expr:
    result = ex.ZERO
    for n in sorted(coeffs):
        c = coeffs[n]
        if c == 0:
            continue
        term = ex.mul(ex.Const(c), ex.power(ex.Var("t"), n))
        result = ex.add(result, term)
    return result


def _poly_derivative(coeffs: dict) -> dict:
    return {n - 1: c * n for n, c in coeffs.items() if n > 0}


def integrate_symbolic(g: ex.Expr) -> Optional[ex.Expr]:
    """An antiderivative of ``g`` in t when ``g`` is a sum of poly(t) * exp(affine t)."""
    if ex.free_vars(g) - {"t"}:
        return None
    try:
        p = ex.to_poly(g)
    except DomainError:
        return None
    groups: dict = {}
    for mono, c in p.terms.items():
        n = 0
        a, b = Fraction(0), Fraction(0)
        for key, q in mono:
            if key == "t":
                if q < 0:
                    return None
                n = q
                continue
            atom = p.atoms[key]
            if not (isinstance(atom, ex.Func) and atom.name == "exp"):
                return None
            ab = _affine(atom.arg)
            if ab is None:
                return None
            a += q * ab[0]
            b += q * ab[1]
        poly = groups.setdefault((a, b), {})
        poly[n] = poly.get(n, 0) + c
    total = ex.ZERO
    t = ex.Var("t")
    for (a, b), poly in sorted(groups.items(), key=lambda kv: (float(kv[0][0]), float(kv[0][1]))):
        if a == 0:
            part = _poly_expr({n + 1: c / (n + 1) for n, c in poly.items()})
            if b != 0:
                part = ex.mul(ex.func("exp", ex.Const(b)), part)
        else:
            # integral of p(t) e^{at+b} = e^{at+b} * sum_k (-1)^k p^(k)(t) / a^(k+1)
            q_coeffs: dict = {}
            deriv = dict(poly)
            k = 0
            while deriv:
                for n, c in deriv.items():
                    q_coeffs[n] = q_coeffs.get(n, 0) + (-1) ** k * c / a ** (k + 1)
                deriv = _poly_derivative(deriv)
                k += 1
            arg = ex.add(ex.mul(ex.Const(a), t), ex.Const(b))
            part = ex.mul(ex.func("exp", arg), _poly_expr(q_coeffs))
        total = ex.add(total, part)
    return total


# ---------------------------------------------------------------------------


def _derivatives_at(fn, a, count):
    """[fn(a), fn'(a), ..., fn^(count-1)(a)] through Taylor evaluation."""
    if count <= 0:
        return []
    tv = Taylor.variable(a, 0, 1, count - 1)
    val = fn(tv)
    if not isinstance(val, Taylor):
        return [float(val)] + [0.0] * (count - 1)
    return [val.d(*([0] * k)) for k in range(count)]


class Antiderivative:
    """A fixed antiderivative ``A(t) = integral_{t0}^{t} g(s) ds``."""

    def __init__(self, integrand, t0: float = 0.0, tol: float = DEFAULT_TOL, panel: float = DEFAULT_PANEL):
        self.integrand = TimeFunction.lift(integrand)
        self.t0 = float(t0)
        self.tol = float(tol)
        self.panel = float(panel)
        self.expr: Optional[ex.Expr] = None
        self._compiled = None
        self._nodes = {0: 0.0}
        self._values: dict = {}
        self._lock = threading.Lock()
        if self.integrand.expr is not None:
            prim = integrate_symbolic(self.integrand.expr)
            if prim is not None:
                self._set_symbolic(prim)

    @property
    def backend(self):
        return "symbolic" if self.expr is not None else "numeric"

    def _set_symbolic(self, prim: ex.Expr):
        compiled = ex.compile_expr(prim)
        try:
            base = compiled(self.t0, 0.0, 0.0)
        except DomainError:
            return
        exact = ex.fold(ex.substitute(prim, {"t": ex.Const(Fraction(self.t0))}))
        if isinstance(exact, ex.Const) and float(exact.value) == base:
            offset = exact
        else:
            offset = ex.Const(float(base))
        self.expr = ex.sub(prim, offset) if not ex.is_const(offset, 0) else prim
        self._compiled = ex.compile_expr(self.expr)
        self._base = base

    # -- numeric backend -----------------------------------------------------
    def _g(self, s):
        try:
            value = float(self.integrand(s))
        except DomainError as err:
            raise QuadratureError(f"integrand undefined at t={s:.12g}: {err}") from None
        if not math.isfinite(value):
            raise QuadratureError(f"integrand not finite at t={s:.12g}")
        return value

    def _quad(self, a, b):
        if a == b:
            return 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                value, _ = integrate.quad(self._g, a, b, epsabs=self.tol, epsrel=1e-12, limit=200)
            except integrate.IntegrationWarning:
                grid = np.linspace(a, b, 401)
                worst = None
                for s in grid:
                    try:
                        v = abs(self._g(s))
                    except QuadratureError:
                        worst = (float("inf"), s)
                        break
                    if worst is None or v > worst[0]:
                        worst = (v, s)
                raise QuadratureError(
                    f"quadrature failed on [{a:.6g}, {b:.6g}]; integrand appears singular near t={worst[1]:.6g}"
                ) from None
        return value

    def _node_value(self, k):
        with self._lock:
            if k in self._nodes:
                return self._nodes[k]
            step = 1 if k > 0 else -1
            j = k
            while j not in self._nodes:
                j -= step
            acc = self._nodes[j]
            while j != k:
                a = self.t0 + j * self.panel
                b = self.t0 + (j + step) * self.panel
                acc += self._quad(a, b)
                j += step
                self._nodes[j] = acc
            return acc

    def _numeric(self, t):
        cached = self._values.get(t)
        if cached is not None:
            return cached
        value = self._numeric_uncached(t)
        if len(self._values) < _VALUE_CACHE:
            self._values[t] = value
        return value

    def _numeric_uncached(self, t):
        s = (t - self.t0) / self.panel
        k = math.floor(s) if s >= 0 else math.ceil(s)
        node = self.t0 + k * self.panel
        return self._node_value(k) + self._quad(node, t)

    # -- evaluation ------------------------------------------------------------
    def __call__(self, t):
        if self._compiled is not None:
            return self._compiled(t, 0.0, 0.0)
        if isinstance(t, Taylor):
            a = t.value
            value = self._numeric(a)
            order = t.order
            if order == 0:
                return Taylor.constant(value, t.space)
            return t.compose([value] + _derivatives_at(self.integrand, a, order))
        return self._numeric(float(t))

    def derivative(self, t):
        return self.integrand(t)

    def as_function(self) -> TimeFunction:
        return TimeFunction(fn=self, expr=self.expr)

    def rebased(self, t0: float) -> "Antiderivative":
        return Antiderivative(self.integrand, t0, self.tol, self.panel)


class ExpAntiderivative:
    """``t -> exp(c * A(t))`` for a fixed antiderivative ``A`` of ``g``."""

    def __init__(self, integrand, c: float = 1.0, t0: float = 0.0, tol: float = DEFAULT_TOL):
        self.inner = Antiderivative(integrand, t0, tol)
        self.c = c
        self.expr = None
        if self.inner.expr is not None:
            self.expr = ex.func("exp", ex.mul(ex.Const(c), self.inner.expr))

    @property
    def t0(self):
        return self.inner.t0

    def __call__(self, t):
        return t_exp(self.c * self.inner(t))

    def log_derivative(self, t):
        return self.c * self.inner.integrand(t)

    def derivative(self, t):
        return self.log_derivative(t) * self(t)

    def as_function(self) -> TimeFunction:
        return TimeFunction(fn=self, expr=self.expr)

    def reciprocal(self) -> TimeFunction:
        """1/lambda, kept symbolic when possible."""
        if self.inner.expr is not None:
            return TimeFunction(expr=ex.func("exp", ex.mul(ex.Const(-self.c), self.inner.expr)))
        return TimeFunction(fn=lambda t: t_exp(-self.c * self.inner(t)))


def make_antiderivative(g, t0: float = 0.0, tol: float = DEFAULT_TOL) -> Antiderivative:
    return Antiderivative(g, t0, tol)


def exp_antiderivative(g, c: float = 1.0, t0: float = 0.0, tol: float = DEFAULT_TOL) -> ExpAntiderivative:
    return ExpAntiderivative(g, c, t0, tol)


def integral(g, t0: float = 0.0, tol: float = DEFAULT_TOL) -> TimeFunction:
    """Fixed antiderivative of ``g`` as a :class:`TimeFunction`."""
    g = TimeFunction.lift(g)
    if g.is_zero():
        return TimeFunction(expr=ex.ZERO)
    return Antiderivative(g, t0, tol).as_function()
