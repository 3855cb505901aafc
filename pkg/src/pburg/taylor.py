"""Truncated multivariate Taylor arithmetic (forward-mode automatic differentiation).

A :class:`Taylor` number carries the normalized Taylor coefficients of a
function of ``n`` seed variables up to total degree ``order``.  Arithmetic and
the elementary functions below propagate them exactly, so evaluating any
composition of them on seeded variables yields every partial derivative up to
``order`` to machine precision.

The module-level functions :func:`exp`, :func:`log`, :func:`sqrt`,
:func:`fabs` and :func:`power` accept plain numbers as well, which lets the same
formula code run on floats (fast path) and on Taylor numbers (derivatives).
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from functools import lru_cache
from numbers import Real

import numpy as np

from .errors import DomainError


class _Space:
    """Index bookkeeping for coefficient vectors of ``n`` variables up to ``order``."""

    def __init__(self, n, order):
        self.n = n
        self.order = order
        indices = []
        for deg in range(order + 1):
            level = [idx for idx in itertools.product(range(deg + 1), repeat=n) if sum(idx) == deg]
            indices.extend(sorted(level, reverse=True))
        self.indices = indices
        self.pos = {idx: k for k, idx in enumerate(indices)}
        self.size = len(indices)
        self.fact = np.array([math.prod(math.factorial(a) for a in idx) for idx in indices], dtype=float)
        pi, pj, pk = [], [], []
        for i, a in enumerate(indices):
            for j, b in enumerate(indices):
                if sum(a) + sum(b) <= order:
                    pi.append(i)
                    pj.append(j)
                    pk.append(self.pos[tuple(x + y for x, y in zip(a, b))])
        self.pi = np.array(pi, dtype=np.intp)
        self.pj = np.array(pj, dtype=np.intp)
        self.pk = np.array(pk, dtype=np.intp)

    def diff_tables(self, var):
        lower = space(self.n, self.order - 1)
        src, mult = [], []
        for idx in lower.indices:
            up = list(idx)
            up[var] += 1
            src.append(self.pos[tuple(up)])
            mult.append(idx[var] + 1)
        return lower, np.array(src, dtype=np.intp), np.array(mult, dtype=float)


@lru_cache(maxsize=None)
def space(n, order):
    if n < 1 or order < 0:
        raise ValueError("need n >= 1 variables and order >= 0")
    return _Space(n, order)


@lru_cache(maxsize=None)
def _diff_tables(n, order, var):
    return space(n, order).diff_tables(var)


_FAST = (float, int)


def _scalar(value):
    if type(value) in _FAST:
        return value
    if isinstance(value, Fraction):
        return float(value)
    return value


class Taylor:
    __slots__ = ("coef", "space")
    __array_ufunc__ = None  # make numpy scalars defer to our reflected operators

    def __init__(self, coef, sp):
        self.coef = coef
        self.space = sp

    # -- construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, sp):
        coef = np.zeros(sp.size)
        coef[0] = float(value)
        return cls(coef, sp)

    @classmethod
    def variable(cls, value, index, n, order):
        sp = space(n, order)
        coef = np.zeros(sp.size)
        coef[0] = float(value)
        if order >= 1:
            unit = [0] * n
            unit[index] = 1
            coef[sp.pos[tuple(unit)]] = 1.0
        return cls(coef, sp)

    @classmethod
    def seed(cls, values, order):
        """Independent variables at the point ``values``."""
        n = len(values)
        return tuple(cls.variable(v, i, n, order) for i, v in enumerate(values))

    # -- inspection ---------------------------------------------------------
    @property
    def value(self):
        return float(self.coef[0])

    @property
    def order(self):
        return self.space.order

    def d(self, *variables):
        """Partial derivative with respect to the listed variable indices."""
        idx = [0] * self.space.n
        for v in variables:
            idx[v] += 1
        if sum(idx) > self.space.order:
            raise ValueError("derivative order exceeds truncation order")
        k = self.space.pos[tuple(idx)]
        return float(self.coef[k] * self.space.fact[k])

    def diff(self, var):
        """Derivative with respect to seed ``var`` as a Taylor number of one order less."""
        if self.space.order == 0:
            raise ValueError("cannot differentiate an order-0 Taylor number")
        lower, src, mult = _diff_tables(self.space.n, self.space.order, var)
        return Taylor(self.coef[src] * mult, lower)

    def truncate(self, order):
        if order >= self.space.order:
            return self
        sp = space(self.space.n, order)
        return Taylor(self.coef[: sp.size].copy(), sp)

    def __repr__(self):
        return f"Taylor(value={self.value!r}, n={self.space.n}, order={self.space.order})"

    # -- arithmetic ---------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Taylor):
            if other.space is self.space:
                return self, other
            if other.space.n != self.space.n:
                raise ValueError("Taylor numbers over different variable sets")
            order = min(self.space.order, other.space.order)
            return self.truncate(order), other.truncate(order)
        return None

    def __add__(self, other):
        if type(other) in _FAST:
            coef = self.coef.copy()
            coef[0] += other
            return Taylor(coef, self.space)
        pair = self._coerce(other)
        if pair is not None:
            a, b = pair
            return Taylor(a.coef + b.coef, a.space)
        if isinstance(other, (Real, Fraction)):
            coef = self.coef.copy()
            coef[0] += _scalar(other)
            return Taylor(coef, self.space)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return Taylor(-self.coef, self.space)

    def __pos__(self):
        return self

    def __sub__(self, other):
        if type(other) in _FAST:
            coef = self.coef.copy()
            coef[0] -= other
            return Taylor(coef, self.space)
        pair = self._coerce(other)
        if pair is not None:
            a, b = pair
            return Taylor(a.coef - b.coef, a.space)
        if isinstance(other, (Real, Fraction)):
            coef = self.coef.copy()
            coef[0] -= _scalar(other)
            return Taylor(coef, self.space)
        return NotImplemented

    def __rsub__(self, other):
        if isinstance(other, (Real, Fraction)):
            coef = -self.coef
            coef[0] += _scalar(other)
            return Taylor(coef, self.space)
        return NotImplemented

    def __mul__(self, other):
        if type(other) in _FAST:
            return Taylor(self.coef * other, self.space)
        pair = self._coerce(other)
        if pair is not None:
            a, b = pair
            sp = a.space
            coef = np.bincount(sp.pk, weights=a.coef[sp.pi] * b.coef[sp.pj], minlength=sp.size)
            return Taylor(coef, sp)
        if isinstance(other, (Real, Fraction)):
            return Taylor(self.coef * _scalar(other), self.space)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Taylor):
            return self * other.reciprocal()
        if isinstance(other, (Real, Fraction)):
            other = _scalar(other)
            if other == 0:
                raise DomainError("division by zero")
            return Taylor(self.coef / other, self.space)
        return NotImplemented

    def __rtruediv__(self, other):
        if isinstance(other, (Real, Fraction)):
            return self.reciprocal() * _scalar(other)
        return NotImplemented

    def __pow__(self, exponent):
        if isinstance(exponent, Taylor):
            return exp(log(self) * exponent)
        return power(self, exponent)

    def __rpow__(self, base):
        return exp(self * math.log(_scalar(base)))

    # -- univariate composition --------------------------------------------
    def compose(self, derivatives):
        """Evaluate g(self) given [g(a), g'(a), ..., g^(K)(a)] at a = self.value."""
        order = self.space.order
        if len(derivatives) < order + 1:
            raise ValueError("not enough derivatives for the truncation order")
        h = Taylor(self.coef.copy(), self.space)
        h.coef[0] = 0.0
        result = Taylor.constant(derivatives[order] / math.factorial(order), self.space)
        for k in range(order - 1, -1, -1):
            result = result * h
            result.coef[0] += derivatives[k] / math.factorial(k)
        return result

    def reciprocal(self):
        a = self.value
        if a == 0.0:
            raise DomainError("division by zero")
        order = self.space.order
        return self.compose([(-1) ** k * math.factorial(k) / a ** (k + 1) for k in range(order + 1)])


# ---------------------------------------------------------------------------
# elementary functions dispatching on floats and Taylor numbers


def exp(a):
    if isinstance(a, Taylor):
        e = exp(a.value)
        return a.compose([e] * (a.space.order + 1))
    try:
        return math.exp(_scalar(a))
    except OverflowError:
        raise DomainError("exp overflow", a) from None


def log(a):
    if isinstance(a, Taylor):
        x = a.value
        if not x > 0.0:
            raise DomainError("log of non-positive value", x)
        order = a.space.order
        derivs = [math.log(x)]
        derivs += [(-1) ** (k - 1) * math.factorial(k - 1) / x**k for k in range(1, order + 1)]
        return a.compose(derivs)
    x = _scalar(a)
    if not x > 0.0:
        raise DomainError("log of non-positive value", x)
    return math.log(x)


def sqrt(a):
    if isinstance(a, Taylor):
        if a.space.order >= 1 and not a.value > 0.0:
            raise DomainError("sqrt not differentiable at non-positive value", a.value)
        return power(a, 0.5)
    x = _scalar(a)
    if x < 0.0:
        raise DomainError("sqrt of negative value", x)
    return math.sqrt(x)


def fabs(a):
    if isinstance(a, Taylor):
        x = a.value
        if x == 0.0 and a.space.order >= 1:
            raise DomainError("abs not differentiable at zero")
        return a if x > 0.0 else -a
    return abs(_scalar(a))


def _integer_exponent(p):
    if isinstance(p, int):
        return p
    if isinstance(p, Fraction) and p.denominator == 1:
        return int(p)
    if isinstance(p, float) and p.is_integer() and abs(p) < 2**31:
        return int(p)
    return None


def power(a, p):
    """``a ** p`` for a constant exponent ``p``."""
    n = _integer_exponent(p)
    if isinstance(a, Taylor):
        if n is not None and n >= 0:
            result = Taylor.constant(1.0, a.space)
            base = a
            while n:
                if n & 1:
                    result = result * base
                n >>= 1
                if n:
                    base = base * base
            return result
        x = a.value
        if n is not None:
            if x == 0.0:
                raise DomainError("zero raised to a negative power")
            return power(a.reciprocal(), -n)
        p = float(p)
        if not x > 0.0:
            raise DomainError("non-integer power of non-positive value", x)
        order = a.space.order
        derivs = []
        coeff = 1.0
        for k in range(order + 1):
            derivs.append(coeff * x ** (p - k))
            coeff *= p - k
        return a.compose(derivs)
    x = _scalar(a)
    if n is not None:
        if x == 0 and n < 0:
            raise DomainError("zero raised to a negative power")
        return float(x) ** n
    if x < 0:
        raise DomainError("non-integer power of negative value", x)
    if x == 0 and float(p) < 0:
        raise DomainError("zero raised to a negative power")
    return float(x) ** float(p)


def value_of(a):
    """Float value of a number or Taylor number."""
    return a.value if isinstance(a, Taylor) else float(a)
