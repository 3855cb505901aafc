"""The three equation families, their jet residuals and subclass structure.

    P_f:  v_t + v_x^2 + f v_xx = 0
    C_f:  u_t + (u^2 + f u_x)_x = 0      (expanded: u_t + 2 u u_x + f_x u_x + f u_xx)
    L_f:  u_t + u u_x + f u_xx = 0

Residuals are evaluated off-shell: w_t is a free jet coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from .analysis import ExpAntiderivative, TimeFunction
from .errors import ClassificationError, DomainError, IndeterminateError, ParameterError
from .report import JetSampler, VerificationReport, tolerance_for
from .taylor import Taylor, space

NONVANISHING_EPS = 1e-6


class Family(str, Enum):
    P = "P"
    C = "C"
    L = "L"

    @property
    def dependent(self) -> str:
        return "v" if self is Family.P else "u"

    @classmethod
    def of(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ParameterError(f"unknown equation family {value!r}; expected P, C or L") from None


class Subclass(str, Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    C1 = "C1"
    C2 = "C2"
    L = "L"


@dataclass(frozen=True)
class Jet2:
    """A point (t, x, w) with derivative values; w_tx and w_xxx are optional third-order slots."""

    t: float
    x: float
    w: float
    w_t: float = 0.0
    w_x: float = 0.0
    w_xx: float = 0.0
    w_tx: Optional[float] = None
    w_xxx: Optional[float] = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not math.isfinite(v):
                raise DomainError(f"jet entry {f.name} is not finite")

    def entries(self):
        return tuple(getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None)

    def magnitude(self) -> float:
        return max(abs(v) for v in self.entries())

    def replace(self, **changes) -> "Jet2":
        return replace(self, **changes)

    def derivatives(self) -> dict:
        """Known partials of w keyed by (order in t, order in x)."""
        out = {(0, 0): self.w, (1, 0): self.w_t, (0, 1): self.w_x, (0, 2): self.w_xx}
        if self.w_tx is not None:
            out[(1, 1)] = self.w_tx
        if self.w_xxx is not None:
            out[(0, 3)] = self.w_xxx
        return out

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    def field(self, order: int):
        """Local polynomial extension of w as a Taylor number in seeds (t, x).

        Partials missing from the jet are taken as zero; every partial that is
        present is reproduced exactly at the base point.
        """
        sp = space(2, order)
        coef = [0.0] * sp.size
        for (i, j), value in self.derivatives().items():
            if i + j <= order:
                k = sp.pos[(i, j)]
                coef[k] = value / sp.fact[k]
        return Taylor(np.array(coef), sp)

    def seeds(self, order: int):
        return Taylor.seed((self.t, self.x), order)


class Coefficient:
    """The arbitrary element f(t, x): an Expr, a callable, or both.

    Callables must accept floats and Taylor numbers.  ``x_derivative`` is
    symbolic for Exprs and forward-mode AD otherwise.
    """

    __slots__ = ("fn", "expr", "_fx")

    def __init__(self, fn: Optional[Callable] = None, expr: Optional[ex.Expr] = None):
        if expr is not None:
            extra = ex.free_vars(expr) - {"t", "x"}
            if extra:
                raise ParameterError(f"f may depend on t and x only, found {sorted(extra)}")
            compiled = ex.compile_expr(expr)
            if fn is None:
                fn = lambda t, x: compiled(t, x, 0.0)  # noqa: E731
            fx = ex.compile_expr(ex.differentiate(expr, "x"))
            self._fx = lambda t, x: fx(t, x, 0.0)
        else:
            self._fx = None
        if fn is None:
            raise ParameterError("coefficient needs an expression or a callable")
        self.fn = fn
        self.expr = expr

    @classmethod
    def lift(cls, value) -> "Coefficient":
        if isinstance(value, Coefficient):
            return value
        if isinstance(value, str):
            return cls(expr=ex.parse(value))
        if isinstance(value, ex.Expr):
            return cls(expr=value)
        if isinstance(value, (int, float)):
            return cls(expr=ex.Const(value))
        if isinstance(value, TimeFunction):
            g = value
            return cls(fn=lambda t, x: g(t), expr=g.expr)
        if callable(value):
            return cls(fn=value)
        raise ParameterError(f"cannot interpret {value!r} as a coefficient f(t, x)")

    def __call__(self, t, x):
        return self.fn(t, x)

    def x_derivative(self, t, x):
        if self._fx is not None:
            return self._fx(t, x)
        if isinstance(t, Taylor) or isinstance(x, Taylor):
            raise ValueError("AD x-derivative of a callable coefficient needs float inputs")
        ts, xs = Taylor.seed((t, x), 1)
        return self.fn(ts, xs).d(1)

    def __repr__(self):
        return f"Coefficient({ex.to_string(self.expr)})" if self.expr is not None else "Coefficient(<callable>)"


def default_box() -> ex.SampleBox:
    return ex.SampleBox.of(t=(0.1, 1.0), x=(0.5, 1.5))


class Equation:
    """An equation of family P, C or L with arbitrary element f on a working box."""

    def __init__(self, family, f, box: Optional[ex.SampleBox] = None, check: bool = True):
        self.family = Family.of(family)
        self.f = Coefficient.lift(f)
        self.box = box if box is not None else default_box()
        if check:
            check_nonvanishing(self.f, self.box)

    def residual(self, jet: Jet2) -> float:
        return residual(self, jet)

    def solve_wt(self, jet: Jet2) -> float:
        return solve_wt(self, jet)

    def __repr__(self):
        return f"Equation({self.family.value}, {self.f!r})"


def check_nonvanishing(f, box: ex.SampleBox, eps: float = NONVANISHING_EPS):
    """Reject f that is (nearly) zero at a sample or changes sign across the box."""
    f = Coefficient.lift(f)
    values = []
    for t, x, _ in box.points():
        try:
            values.append(float(f(t, x)))
        except DomainError:
            continue
    if not values:
        raise DomainError("f is undefined on the whole working box")
    smallest = min(abs(v) for v in values)
    if smallest <= eps:
        raise ParameterError(f"f vanishes (or nearly) on the working box: min |f| = {smallest:.3g}")
    if min(values) < 0 < max(values):
        raise ParameterError("f changes sign on the working box, so it vanishes somewhere inside")


def residual_values(family: Family, w, w_t, w_x, w_xx, f, f_x=0.0):
    if family is Family.P:
        return w_t + w_x * w_x + f * w_xx
    if family is Family.C:
        return w_t + 2 * w * w_x + f_x * w_x + f * w_xx
    return w_t + w * w_x + f * w_xx


def residual(eq: Equation, jet: Jet2) -> float:
    f = eq.f(jet.t, jet.x)
    fx = eq.f.x_derivative(jet.t, jet.x) if eq.family is Family.C else 0.0
    return float(residual_values(eq.family, jet.w, jet.w_t, jet.w_x, jet.w_xx, f, fx))


def solve_wt(eq: Equation, jet: Jet2) -> float:
    """The w_t that puts the jet on the equation (the residual is linear in w_t)."""
    return -residual(eq, jet.replace(w_t=0.0))


# ---------------------------------------------------------------------------
# subclasses


def _as_expr(f) -> ex.Expr:
    if isinstance(f, str):
        return ex.parse(f)
    if isinstance(f, Coefficient):
        if f.expr is None:
            raise ClassificationError("classification needs f as an expression")
        return f.expr
    if isinstance(f, (int, float)):
        return ex.Const(f)
    return f


def classify(family, f, box: Optional[ex.SampleBox] = None) -> Subclass:
    family = Family.of(family)
    f = _as_expr(f)
    box = box if box is not None else default_box()
    check_nonvanishing(f, box)
    if family is Family.L:
        return Subclass.L
    try:
        cubic_free = ex.probably_zero(ex.derivative(f, "x", "x", "x"), box)
        if family is Family.C:
            return Subclass.C2 if cubic_free else Subclass.C1
        if not cubic_free:
            return Subclass.P1
        const = ex.as_constant(f, ("t", "x"), box)
    except IndeterminateError as err:
        raise ClassificationError(f"cannot classify f = {ex.to_string(f)}: {err}") from None
    return Subclass.P3 if const is not None else Subclass.P2


@dataclass(frozen=True)
class QuadraticDecomposition:
    """f = f2(t) x^2 + f1(t) x + f0(t)."""

    f2: ex.Expr
    f1: ex.Expr
    f0: ex.Expr

    def reconstruct(self) -> ex.Expr:
        x = ex.Var("x")
        return ex.add(ex.add(ex.mul(self.f2, ex.power(x, 2)), ex.mul(self.f1, x)), self.f0)

    def as_tuple(self):
        return (self.f2, self.f1, self.f0)


def _strip_x(e: ex.Expr, box: ex.SampleBox) -> ex.Expr:
    e = ex.simplify(e)
    if "x" not in ex.free_vars(e):
        return e
    if not ex.probably_zero(ex.differentiate(e, "x"), box):
        raise ClassificationError(f"coefficient {ex.to_string(e)} still depends on x")
    lo, hi = box.interval("x")
    return ex.simplify(ex.substitute(e, {"x": ex.Const((lo + hi) / 2)}))


def decompose_quadratic(f, box: Optional[ex.SampleBox] = None) -> QuadraticDecomposition:
    f = _as_expr(f)
    box = box if box is not None else default_box()
    try:
        if not ex.probably_zero(ex.derivative(f, "x", "x", "x"), box):
            raise ClassificationError("f is not quadratic in x (f_xxx does not vanish)")
        coeffs = ex.poly_in(f, "x")
        if coeffs is not None and all(0 <= k <= 2 for k in coeffs):
            parts = [coeffs.get(k, ex.ZERO) for k in (2, 1, 0)]
            if all("x" not in ex.free_vars(p) for p in parts):
                return QuadraticDecomposition(*(ex.simplify(p) for p in parts))
        x = ex.Var("x")
        fx = ex.differentiate(f, "x")
        fxx = ex.differentiate(fx, "x")
        f2 = ex.mul(ex.Const(Fraction(1, 2)), fxx)
        f1 = ex.sub(fx, ex.mul(x, fxx))
        f0 = ex.add(ex.sub(f, ex.mul(x, fx)), ex.mul(ex.div(ex.power(x, 2), ex.Const(2)), fxx))
        return QuadraticDecomposition(*(_strip_x(p, box) for p in (f2, f1, f0)))
    except IndeterminateError as err:
        raise ClassificationError(str(err)) from None


# ---------------------------------------------------------------------------
# conservation laws


def lambda_characteristic(f, t0: float = 0.0, box: Optional[ex.SampleBox] = None) -> ExpAntiderivative:
    """lambda = exp(int f_xx dt) for f with f_xxx = 0."""
    dec = decompose_quadratic(f, box)
    return ExpAntiderivative(dec.f2, 2.0, t0)


def current_discrepancy(family, f, jet: Jet2, lam=None) -> float:
    """D_t(density) + D_x(flux) - multiplier * residual at an off-shell jet.

    C: density u, flux u^2 + f u_x, multiplier 1.
    L: density lam u, flux lam (u^2/2 + f u_x - f_x u), multiplier lam.
    Total derivatives are exact, via the local polynomial extension of the jet.
    """
    family = Family.of(family)
    f = Coefficient.lift(f)
    ts, xs = jet.seeds(2)
    u = jet.field(2)
    ux = u.diff(1)
    t1, x1 = ts.truncate(1), xs.truncate(1)
    u1 = u.truncate(1)
    fv = f(ts, xs)
    f1 = fv.truncate(1) if isinstance(fv, Taylor) else fv
    if family is Family.C:
        dens = u1
        flux = u1 * u1 + f1 * ux
        mult = 1.0
    elif family is Family.L:
        if lam is None:
            raise ParameterError("the L-family current needs the characteristic lambda")
        fx = fv.diff(1) if isinstance(fv, Taylor) else 0.0
        lv = lam(t1)
        dens = lv * u1
        flux = lv * (0.5 * u1 * u1 + f1 * ux - fx * u1)
        mult = lam(jet.t)
    else:
        raise ParameterError("family P has no nonzero conservation law for non-constant f")
    div = _d(dens, 0) + _d(flux, 1)
    eq = Equation(family, f, check=False)
    return float(div - mult * residual(eq, jet))


def _d(value, var):
    return value.d(var) if isinstance(value, Taylor) else 0.0


def conserved_current_check(family, f, box: Optional[ex.SampleBox] = None, n: int = 100, seed: int = 0,
                            lam=None, t0: float = 0.0) -> VerificationReport:
    family = Family.of(family)
    if family is Family.P:
        raise ParameterError("family P has no nonzero conservation law for non-constant f")
    box = box if box is not None else default_box()
    coeff = Coefficient.lift(f)
    if family is Family.L and lam is None:
        if coeff.expr is None:
            raise ParameterError("pass lambda explicitly for a callable f")
        lam = lambda_characteristic(coeff.expr, t0, box)
    sampler = JetSampler(box, n, seed)
    jets = sampler.draw(2)
    residuals, points, biggest = [], [], 0.0
    for jet in jets:
        residuals.append(current_discrepancy(family, coeff, jet, lam))
        points.append(jet.to_dict())
        biggest = max(biggest, jet.magnitude())
    return VerificationReport.from_samples(residuals, tolerance_for(biggest, rel=1e-8), points,
                                           label=f"{family.value} conserved current")
