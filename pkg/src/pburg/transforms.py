"""Point transformations and closed-form builders for the equivalence groups.

A :class:`PointTransformation` is a triple ``t~ = T(t)``, ``x~ = X(t, x)``,
``w~ = W(t, x, w)`` of callables that accept floats and Taylor numbers, so
every partial derivative is exact (forward-mode AD through closed forms, and
through fixed antiderivatives via their integrands).

Every builder multiplies f by a constant: ``f~ = X_x^2 f / T_t = f_scale * f``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from fractions import Fraction
from typing import Callable, Optional

from . import expr as ex
from .analysis import DEFAULT_TOL, ExpAntiderivative, TimeFunction, integral
from .classes import Coefficient, Family, QuadraticDecomposition, decompose_quadratic, default_box
from .errors import DomainError, InversionError, ParameterError, PburgError, VerificationError
from .report import DEGENERACY_EPS, EXCLUSION_EPS
from .taylor import Taylor, exp, fabs, log, value_of

# ---------------------------------------------------------------------------
# groups and parameter records


class Group(str, Enum):
    USUAL_POT = "usual-pot"
    P3 = "p3"
    P2 = "p2"
    P2_LINEAR = "p2-linear"
    C_USUAL = "c-usual"
    C2 = "c2"
    GBE = "gbe"

    @classmethod
    def of(cls, value) -> "Group":
        if isinstance(value, Group):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(g.value for g in cls)
            raise ParameterError(f"unknown group {value!r}; expected one of {names}") from None

    @property
    def family(self) -> Family:
        return {Group.C_USUAL: Family.C, Group.C2: Family.C, Group.GBE: Family.L}.get(self, Family.P)


def _nonzero(name, value):
    if value == 0:
        raise ParameterError(f"parameter {name} must be nonzero")


class _Params:
    group: Group

    def to_dict(self) -> dict:
        out = {"group": self.group.value}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, HeatSolution):
                value = value.to_dict()
            elif isinstance(value, Fraction):
                value = float(value)
            out[f.name] = value
        return out

    def values(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class UsualPotParams(_Params):
    alpha: float = 1.0
    beta: float = 0.0
    kappa: float = 1.0
    mu1: float = 0.0
    mu0: float = 0.0
    nu: float = 0.0
    group = Group.USUAL_POT

    def __post_init__(self):
        _nonzero("alpha", self.alpha)
        _nonzero("kappa", self.kappa)


@dataclass(frozen=True)
class CUsualParams(_Params):
    alpha: float = 1.0
    beta: float = 0.0
    kappa: float = 1.0
    mu1: float = 0.0
    mu0: float = 0.0
    group = Group.C_USUAL

    def __post_init__(self):
        _nonzero("alpha", self.alpha)
        _nonzero("kappa", self.kappa)


def _mobius_check(p):
    if p.alpha * p.delta - p.beta * p.gamma == 0:
        raise ParameterError("alpha*delta - beta*gamma must be nonzero")
    _nonzero("kappa", p.kappa)


@dataclass(frozen=True)
class HeatSolution:
    """A solution F(t, x) of F_t + f F_xx = 0 for constant f."""

    expr: ex.Expr
    f: float
    kind: str = "expr"
    params: tuple = ()

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        out.update(dict(self.params))
        if self.kind == "expr":
            out["expr"] = ex.to_string(self.expr)
        return out


@dataclass(frozen=True)
class P3Params(_Params):
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    delta: float = 1.0
    kappa: float = 1.0
    mu1: float = 0.0
    mu0: float = 0.0
    k: float = 1.0
    F2: object = None  # HeatSolution, a descriptor dict like {"kind": "quadratic"}, or None for zero
    group = Group.P3

    def __post_init__(self):
        _mobius_check(self)
        _nonzero("k", self.k)


@dataclass(frozen=True)
class P2Params(_Params):
    c0: float = 1.0
    c1: float = 0.0
    c2: float = 1.0
    c3: float = 0.0
    c4: float = 0.0
    c5: float = 0.0
    c6: float = 0.0
    group = Group.P2

    def __post_init__(self):
        _nonzero("c0", self.c0)
        if self.c1 == 0 and self.c2 == 0:
            raise ParameterError("c1 and c2 must not both vanish")


@dataclass(frozen=True)
class P2LinearParams(_Params):
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    delta: float = 1.0
    kappa: float = 1.0
    nu: float = 0.0
    c4: float = 0.0
    c5: float = 0.0
    group = Group.P2_LINEAR

    def __post_init__(self):
        _mobius_check(self)


@dataclass(frozen=True)
class C2Params(_Params):
    c0: float = 1.0
    c1: float = 0.0
    c2: float = 1.0
    c3: float = 0.0
    c4: float = 0.0
    c5: float = 0.0
    group = Group.C2

    def __post_init__(self):
        _nonzero("c0", self.c0)
        if self.c1 == 0 and self.c2 == 0:
            raise ParameterError("c1 and c2 must not both vanish")


@dataclass(frozen=True)
class GBEParams(_Params):
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    delta: float = 1.0
    kappa: float = 1.0
    mu1: float = 0.0
    mu0: float = 0.0
    group = Group.GBE

    def __post_init__(self):
        _mobius_check(self)

    def matrix(self):
        return [[self.alpha, 0.0, self.beta], [self.mu1, self.kappa, self.mu0], [self.gamma, 0.0, self.delta]]

    @classmethod
    def from_matrix(cls, m) -> "GBEParams":
        return cls(alpha=m[0][0], beta=m[0][2], gamma=m[2][0], delta=m[2][2], kappa=m[1][1], mu1=m[1][0], mu0=m[1][2])


PARAM_TYPES = {
    Group.USUAL_POT: UsualPotParams,
    Group.P3: P3Params,
    Group.P2: P2Params,
    Group.P2_LINEAR: P2LinearParams,
    Group.C_USUAL: CUsualParams,
    Group.C2: C2Params,
    Group.GBE: GBEParams,
}
PROJECTIVE = (Group.P3, Group.P2_LINEAR, Group.GBE)
NEEDS_F = (Group.P3, Group.P2, Group.P2_LINEAR, Group.C2)


def params_from_dict(doc: dict):
    """Parse a parameter document into (params, extras) with extras holding t0 and f."""
    if "group" not in doc:
        raise ParameterError("parameter document is missing the field 'group'")
    group = Group.of(doc["group"])
    cls = PARAM_TYPES[group]
    names = [f.name for f in fields(cls)]
    known = set(names) | {"group", "t0", "f"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ParameterError(f"unknown fields for group {group.value}: {', '.join(unknown)}")
    values = {}
    for name in names:
        if name not in doc:
            continue
        value = doc[name]
        if name == "F2":
            if value is not None and not isinstance(value, dict):
                raise ParameterError("F2 must be an object like {\"kind\": \"quadratic\"}")
        elif not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ParameterError(f"parameter {name} must be a number")
        values[name] = value
    extras = {"t0": float(doc.get("t0", 0.0)), "f": doc.get("f")}
    return cls(**values), extras


# ---------------------------------------------------------------------------
# heat solutions


HEAT_KINDS = ("zero", "constant", "linear", "quadratic", "cubic", "exponential", "expr")


def heat_solution(kind: str = "zero", params: Optional[dict] = None, f_const: float = 1.0,
                  box: Optional[ex.SampleBox] = None) -> HeatSolution:
    """Catalog of solutions of F_t + f F_xx = 0."""
    if f_const == 0:
        raise ParameterError("f must be nonzero")
    params = dict(params or {})
    f = ex.Const(f_const)
    t, x = ex.Var("t"), ex.Var("x")
    scale = params.get("scale", 1)
    if kind == "zero":
        e = ex.ZERO
    elif kind == "constant":
        e = ex.Const(params.get("value", 1))
    elif kind == "linear":
        e = x
    elif kind == "quadratic":
        e = ex.sub(ex.power(x, 2), ex.mul(ex.mul(ex.Const(2), f), t))
    elif kind == "cubic":
        e = ex.sub(ex.power(x, 3), ex.mul(ex.mul(ex.mul(ex.Const(6), f), t), x))
    elif kind == "exponential":
        a = ex.Const(params.get("a", 1))
        e = ex.exp(ex.mul(a, ex.sub(x, ex.mul(ex.mul(a, f), t))))
    elif kind == "expr":
        if "expr" not in params:
            raise ParameterError("heat solution of kind 'expr' needs an 'expr' field")
        e = params["expr"]
        e = ex.parse(e) if isinstance(e, str) else e
        if ex.free_vars(e) - {"t", "x"}:
            raise ParameterError("a heat solution may depend on t and x only")
        box = box if box is not None else default_box()
        check = ex.add(ex.differentiate(e, "t"), ex.mul(f, ex.derivative(e, "x", "x")))
        if not ex.probably_zero(check, box):
            raise ParameterError(f"{ex.to_string(e)} does not solve F_t + f F_xx = 0 for f = {f_const}")
        return HeatSolution(e, f_const, "expr", ())
    else:
        raise ParameterError(f"unknown heat solution kind {kind!r}; expected one of {', '.join(HEAT_KINDS)}")
    if kind in ("linear", "quadratic", "cubic", "exponential") and scale != 1:
        e = ex.mul(ex.Const(scale), e)
    kept = tuple(sorted((k, v) for k, v in params.items() if k in ("scale", "value", "a")))
    return HeatSolution(e, f_const, kind, kept)


def _resolve_heat(desc, f_const) -> HeatSolution:
    if desc is None:
        return heat_solution("zero", f_const=f_const)
    if isinstance(desc, HeatSolution):
        if desc.f != f_const:
            return heat_solution(desc.kind, dict(desc.params) | ({"expr": desc.expr} if desc.kind == "expr" else {}),
                                 f_const)
        return desc
    if isinstance(desc, dict):
        desc = dict(desc)
        kind = desc.pop("kind", "zero")
        return heat_solution(kind, desc, f_const)
    raise ParameterError(f"cannot interpret {desc!r} as a heat solution")


# ---------------------------------------------------------------------------
# scalar inversion


def _solve_scalar(g: Callable, y, guess: float, what: str):
    """Solve g(s) = y for s by damped Newton; Taylor-valued y via chord iterations."""
    target = value_of(y)

    def slope(s):
        return g(Taylor.variable(s, 0, 1, 1)).d(0)

    s = float(guess)
    try:
        r = value_of(g(s)) - target
    except DomainError:
        r = math.inf
    for _ in range(200):
        if abs(r) <= 1e-15 * (1.0 + abs(target)):
            break
        try:
            d = slope(s)
        except DomainError:
            d = 0.0
        if d == 0 or not math.isfinite(r):
            raise InversionError(f"cannot invert {what} near {s:.6g}")
        step = r / d
        lam = 1.0
        while True:
            cand = s - lam * step
            try:
                rc = value_of(g(cand)) - target
            except DomainError:
                rc = math.inf
            if math.isfinite(rc) and abs(rc) < abs(r) or lam < 1e-12:
                break
            lam *= 0.5
        if cand == s or lam < 1e-12:
            break
        s, r = cand, rc
    if not abs(r) <= 1e-9 * (1.0 + abs(target)):
        raise InversionError(f"cannot invert {what} at value {target:.6g}")
    if not isinstance(y, Taylor):
        return s
    d = slope(s)
    sol = y * 0.0 + s
    for _ in range(y.order + 1):
        sol = sol - (g(sol) - y) / d
    return sol


# ---------------------------------------------------------------------------
# point transformations


def _as_taylor(value, like: Taylor):
    return value if isinstance(value, Taylor) else Taylor.constant(value, like.space)


DERIVATIVE_NAMES = {
    "T_t": ("T", (0,)), "T_tt": ("T", (0, 0)),
    "X_t": ("X", (0,)), "X_x": ("X", (1,)), "X_tt": ("X", (0, 0)), "X_tx": ("X", (0, 1)), "X_xx": ("X", (1, 1)),
    "W_t": ("W", (0,)), "W_x": ("W", (1,)), "W_w": ("W", (2,)), "W_tt": ("W", (0, 0)), "W_tx": ("W", (0, 1)),
    "W_tw": ("W", (0, 2)), "W_xx": ("W", (1, 1)), "W_xw": ("W", (1, 2)), "W_ww": ("W", (2, 2)),
}


class PointTransformation:
    """``(t, x, w) -> (T(t), X(t, x), W(t, x, w))`` with exact partial derivatives.

    ``exclusions`` lists (name, q) pairs; a point is outside the domain when
    ``|q(t, x, w)|`` is small (poles, zeros of logarithm arguments).
    ``inverse`` optionally holds closed-form (t(t~), x(t, x~), w(t, x, w~)).
    """

    def __init__(self, T, X, W, family, *, group=None, params=None, exclusions=(), f_scale=None,
                 inverse=None, inverse_exprs=None, t0=0.0, f=None, name=""):
        self.T = T
        self.X = X
        self.W = W
        self.family = Family.of(family)
        self.group = Group.of(group) if group is not None else None
        self.params = params
        self.exclusions = tuple(exclusions)
        self.f_scale = f_scale
        self.inverse = inverse
        self.inverse_exprs = inverse_exprs
        self.t0 = t0
        self.f = f
        self.name = name or (self.group.value if self.group else "transformation")

    def __repr__(self):
        return f"PointTransformation({self.name})"

    def __call__(self, t, x, w):
        return self.T(t), self.X(t, x), self.W(t, x, w)

    def point(self, t, x):
        return self.T(t), self.X(t, x)

    # -- domain ----------------------------------------------------------------
    def exclusion_values(self, t, x, w):
        return {name: value_of(q(t, x, w)) for name, q in self.exclusions}

    def in_domain(self, t, x, w, eps: float = EXCLUSION_EPS) -> bool:
        try:
            for _, q in self.exclusions:
                if not abs(value_of(q(t, x, w))) >= eps:
                    return False
            d = self.derivatives(t, x, w, order=1)
            nondeg = d["T_t"] * d["X_x"] * d["W_w"]
        except (DomainError, ZeroDivisionError, OverflowError, InversionError):
            return False
        return math.isfinite(nondeg) and abs(nondeg) >= DEGENERACY_EPS

    # -- derivatives -------------------------------------------------------------
    def partials(self, t, x, w, order: int = 2):
        """(T, X, W) as Taylor numbers in the seeds (t, x, w)."""
        ts, xs, ws = Taylor.seed((t, x, w), order)
        return (_as_taylor(self.T(ts), ts), _as_taylor(self.X(ts, xs), ts), _as_taylor(self.W(ts, xs, ws), ts))

    def derivatives(self, t, x, w, order: int = 2) -> dict:
        comps = dict(zip("TXW", self.partials(t, x, w, order)))
        out = {"T": comps["T"].value, "X": comps["X"].value, "W": comps["W"].value}
        for name, (comp, idx) in DERIVATIVE_NAMES.items():
            if len(idx) <= order:
                out[name] = comps[comp].d(*idx)
        return out

    def scale_factor(self, t, x) -> float:
        """X_x^2 / T_t, the factor multiplying f."""
        if self.f_scale is not None:
            return float(self.f_scale)
        d = self.derivatives(t, x, 0.0, order=1)
        return d["X_x"] ** 2 / d["T_t"]

    # -- target arbitrary element -----------------------------------------------
    def inverse_point(self, s, y, guess=None):
        """(t, x) with T(t) = s and X(t, x) = y."""
        if self.inverse is not None:
            t = self.inverse[0](s)
            return t, self.inverse[1](t, y)
        g0 = guess if guess is not None else (value_of(s), value_of(y))
        t = _solve_scalar(self.T, s, g0[0], "T")
        x = _solve_scalar(lambda xx: self.X(t, xx), y, g0[1], "X")
        return t, x

    def target_expr(self, f) -> Optional[ex.Expr]:
        """Closed-form f~(t~, x~) as an Expr, when the point inverse is rational."""
        f = f if isinstance(f, ex.Expr) else getattr(Coefficient.lift(f), "expr", None)
        if f is None or self.inverse_exprs is None or self.f_scale is None:
            return None
        et, ex_ = self.inverse_exprs
        pulled = ex.substitute(f, {"t": et, "x": ex_})
        return ex.simplify(ex.mul(_const(self.f_scale), pulled))

    def target_coefficient(self, f) -> Coefficient:
        """f~ in the new coordinates: f_scale * f at the preimage (closed-form inverse when known)."""
        f = Coefficient.lift(f)
        e = self.target_expr(f)
        if e is not None:
            return Coefficient(expr=e)
        if self.f_scale is None:
            raise ParameterError("this transformation multiplies f by a non-constant factor")
        scale = float(self.f_scale)

        def ft(s, y):
            t, x = self.inverse_point(s, y)
            return scale * f(t, x)

        return Coefficient(fn=ft)

    def to_dict(self) -> dict:
        if self.params is None:
            return {"group": None, "name": self.name}
        out = self.params.to_dict()
        if self.group in (Group.P2, Group.P2_LINEAR, Group.C2):
            out["t0"] = self.t0
        if self.f is not None and self.group in NEEDS_F:
            out["f"] = ex.to_string(self.f) if isinstance(self.f, ex.Expr) else self.f
        return out


def _const(value) -> ex.Const:
    return ex.Const(value if isinstance(value, (int, Fraction)) else float(value))


def _f(value) -> float:
    return float(value)


def identity(family="P") -> PointTransformation:
    t, x = ex.Var("t"), ex.Var("x")
    return PointTransformation(
        lambda t: t, lambda t, x: x, lambda t, x, w: w, family, f_scale=1.0,
        inverse=(lambda s: s, lambda t, y: y, lambda t, x, z: z), inverse_exprs=(t, x), name="identity")


# ---------------------------------------------------------------------------
# affine and Moebius groups


def _affine_inverse_exprs(a, b, kappa, mu1, mu0):
    t, x = ex.Var("t"), ex.Var("x")
    et = ex.div(ex.sub(t, _const(b)), _const(a))
    ex_ = ex.sub(ex.sub(ex.div(x, _const(kappa)), ex.mul(_const(mu1), et)), _const(mu0))
    return et, ex_


def build_usual_pot(p: UsualPotParams) -> PointTransformation:
    """t~ = a t + b, x~ = k (x + m1 t + m0), v~ = (k^2/a)(v + m1 x/2 + m1^2 t/4 + nu)."""
    a, b, k, m1, m0, nu = map(_f, (p.alpha, p.beta, p.kappa, p.mu1, p.mu0, p.nu))
    c = k * k / a

    def T(t):
        return a * t + b

    def X(t, x):
        return k * (x + m1 * t + m0)

    def W(t, x, v):
        return c * (v + 0.5 * m1 * x + 0.25 * m1 * m1 * t + nu)

    inverse = (
        lambda s: (s - b) / a,
        lambda t, y: y / k - m1 * t - m0,
        lambda t, x, z: z / c - 0.5 * m1 * x - 0.25 * m1 * m1 * t - nu,
    )
    return PointTransformation(T, X, W, Family.P, group=Group.USUAL_POT, params=p,
                               f_scale=Fraction(p.kappa) ** 2 / Fraction(p.alpha) if _exact(p.kappa, p.alpha) else c,
                               inverse=inverse, inverse_exprs=_affine_inverse_exprs(p.alpha, p.beta, p.kappa, p.mu1, p.mu0))


def _exact(*values):
    return all(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in values)


def build_c_usual(p: CUsualParams) -> PointTransformation:
    """t~ = a t + b, x~ = k (x + m1 t + m0), u~ = (k/a)(u + m1/2)."""
    a, b, k, m1, m0 = map(_f, (p.alpha, p.beta, p.kappa, p.mu1, p.mu0))
    c = k / a

    def T(t):
        return a * t + b

    def X(t, x):
        return k * (x + m1 * t + m0)

    def W(t, x, u):
        return c * (u + 0.5 * m1)

    inverse = (
        lambda s: (s - b) / a,
        lambda t, y: y / k - m1 * t - m0,
        lambda t, x, z: z / c - 0.5 * m1,
    )
    scale = Fraction(p.kappa) ** 2 / Fraction(p.alpha) if _exact(p.kappa, p.alpha) else k * k / a
    return PointTransformation(T, X, W, Family.C, group=Group.C_USUAL, params=p, f_scale=scale,
                               inverse=inverse, inverse_exprs=_affine_inverse_exprs(p.alpha, p.beta, p.kappa, p.mu1, p.mu0))


def _delta(p):
    return p.alpha * p.delta - p.beta * p.gamma


def _mobius_t_inverse(a, b, g, d):
    return lambda s: (d * s - b) / (a - g * s)


def _mobius_t_expr(p):
    t = ex.Var("t")
    return ex.div(ex.sub(ex.mul(_const(p.delta), t), _const(p.beta)), ex.sub(_const(p.alpha), ex.mul(_const(p.gamma), t)))


def _pole(g, d):
    return ("gamma*t+delta", lambda t, x, w: g * t + d)


def build_gbe(p: GBEParams) -> PointTransformation:
    """Moebius t~, x~ = (k x + m1 t + m0)/(g t + d), u~ = (k (g t + d) u - k g x + m1 d - m0 g)/Delta."""
    a, b, g, d, k, m1, m0 = map(_f, (p.alpha, p.beta, p.gamma, p.delta, p.kappa, p.mu1, p.mu0))
    D = a * d - b * g

    def T(t):
        return (a * t + b) / (g * t + d)

    def X(t, x):
        return (k * x + m1 * t + m0) / (g * t + d)

    def W(t, x, u):
        return (k * (g * t + d) * u - k * g * x + m1 * d - m0 * g) / D

    inverse = (
        _mobius_t_inverse(a, b, g, d),
        lambda t, y: (y * (g * t + d) - m1 * t - m0) / k,
        lambda t, x, z: (z * D + k * g * x - m1 * d + m0 * g) / (k * (g * t + d)),
    )
    et = _mobius_t_expr(p)
    xv = ex.Var("x")
    # x = (x~ (g t + d) - m1 t - m0)/k with g t + d = Delta/(a - g t~)
    gd = ex.div(_const(_delta(p)), ex.sub(_const(p.alpha), ex.mul(_const(p.gamma), ex.Var("t"))))
    ex_ = ex.div(ex.sub(ex.sub(ex.mul(xv, gd), ex.mul(_const(p.mu1), et)), _const(p.mu0)), _const(p.kappa))
    scale = Fraction(p.kappa) ** 2 / Fraction(_delta(p)) if _exact(p.kappa, p.alpha, p.beta, p.gamma, p.delta) else k * k / D
    excl = [_pole(g, d)] if g != 0 else []
    return PointTransformation(T, X, W, Family.L, group=Group.GBE, params=p, exclusions=excl, f_scale=scale,
                               inverse=inverse, inverse_exprs=(et, ex_))


def _p3_log_f1(a, b, g, d, k, m1, m0, f):
    """ln|F1| with F1 the multiplier appearing in the P3 transformation of v."""
    lk = math.log(abs(k))
    if g != 0:
        def L1(t, x):
            s = g * t + d
            q = g * x - m1 * d + m0 * g
            return lk + 0.5 * log(fabs(s)) - q * q / (4.0 * f * g * s)
    else:
        def L1(t, x):
            return lk + (2.0 * m1 * x + m1 * m1 * t) / (4.0 * f)
    return L1


def build_p3(p: P3Params, f_const: float, branch: int = 1) -> PointTransformation:
    """Transformations between constant-f equations.

    t~ = (a t + b)/(g t + d), x~ = k (x + m1 t + m0)/(g t + d),
    v~ = (k^2 f/Delta) ln|F1 (exp(v/f) + F2)|, f~ = k^2 f/Delta, with F2 a heat solution.
    ``branch`` selects the sign of exp(v/f) + F2 used by the inverse.
    """
    if f_const == 0:
        raise ParameterError("f must be nonzero")
    f = float(f_const)
    a, b, g, d, k, m1, m0, kk = map(_f, (p.alpha, p.beta, p.gamma, p.delta, p.kappa, p.mu1, p.mu0, p.k))
    D = a * d - b * g
    heat = _resolve_heat(p.F2, f_const)
    p = replace(p, F2=heat)
    F2c = ex.compile_expr(heat.expr)
    trivial = ex.is_const(heat.expr, 0)
    L1 = _p3_log_f1(a, b, g, d, kk, m1, m0, f)
    c = k * k * f / D

    def F2(t, x):
        return F2c(t, x, 0.0)

    def T(t):
        return (a * t + b) / (g * t + d)

    def X(t, x):
        return k * (x + m1 * t + m0) / (g * t + d)

    def W(t, x, v):
        if trivial:
            return c * (L1(t, x) + v / f)
        return c * (L1(t, x) + log(fabs(exp(v / f) + F2(t, x))))

    def W_inv(t, x, z):
        r = exp(z / c - L1(t, x))
        e = branch * r - F2(t, x) if not trivial else r
        if not value_of(e) > 0:
            raise DomainError("value outside the image of the P3 transformation")
        return f * log(e)

    excl = [_pole(g, d)] if g != 0 else []
    if not trivial:
        excl.append(("exp(v/f)+F2", lambda t, x, v: exp(v / f) + F2(t, x)))
    inverse = (
        _mobius_t_inverse(a, b, g, d),
        lambda t, y: y * (g * t + d) / k - m1 * t - m0,
        W_inv,
    )
    t_, x_ = ex.Var("t"), ex.Var("x")
    et = _mobius_t_expr(p)
    gd = ex.div(_const(_delta(p)), ex.sub(_const(p.alpha), ex.mul(_const(p.gamma), t_)))
    ex_ = ex.sub(ex.sub(ex.div(ex.mul(x_, gd), _const(p.kappa)), ex.mul(_const(p.mu1), et)), _const(p.mu0))
    scale = k * k / D
    return PointTransformation(T, X, W, Family.P, group=Group.P3, params=p, exclusions=excl, f_scale=scale,
                               inverse=inverse, inverse_exprs=(et, ex_), f=ex.Const(f_const))


# ---------------------------------------------------------------------------
# nonlocal groups for f quadratic in x


def _decomposition(dec) -> tuple:
    if isinstance(dec, QuadraticDecomposition):
        parts = dec.as_tuple()
    elif isinstance(dec, (ex.Expr, str)):
        parts = decompose_quadratic(dec).as_tuple()
    else:
        parts = tuple(dec)
    return tuple(TimeFunction.lift(ex.parse(q) if isinstance(q, str) else q) for q in parts)


class _QuadCore:
    """Shared nonlocal pieces of the P2 and C2 transformations."""

    def __init__(self, c0, c1, c2, c3, c4, c5, dec, t0, tol):
        f2, f1, f0 = _decomposition(dec)
        self.f2, self.f1, self.f0 = f2, f1, f0
        self.lam = ExpAntiderivative(f2.expr if f2.expr is not None else f2, 2.0, t0, tol)
        lam = self.lam.as_function()
        inv_lam = self.lam.reciprocal()
        self.A1 = integral(inv_lam, t0, tol)
        self.X1 = 1.0 / (c1 * self.A1 + c2)
        self.A2 = integral(f1 * inv_lam, t0, tol)
        self.B = c1 * self.A2 + c3
        self.X2 = self.X1 * self.B / 2
        self.IT = integral(self.X1 ** 2, t0, tol)
        self.IX = integral(self.X1 ** 2 * self.B, t0, tol)
        self.lam_fn = lam
        self.inv_lam = inv_lam
        self.c = (c0, c1, c2, c3, c4, c5)
        self.pole = ("c1*A1+c2", lambda t, x, w: c1 * self.A1(t) + c2) if c1 != 0 else None

    def T(self, t):
        c0, c5 = self.c[0], self.c[5]
        return self.IT(t) / c0 + c5

    def X(self, t, x):
        return self.X1(t) * x + self.IX(t) + self.c[4]

    def x_inverse(self, t, y):
        return (y - self.IX(t) - self.c[4]) / self.X1(t)


def build_p2(p: P2Params, dec, t0: float = 0.0, tol: float = DEFAULT_TOL) -> PointTransformation:
    """Transformations of equations with f = f2(t) x^2 + f1(t) x + f0(t).

    lambda = exp(2 int f2), A1 = int 1/lambda, X1 = 1/(c1 A1 + c2),
    A2 = int f1/lambda, X2 = X1 (c1 A2 + c3)/2,
    t~ = (1/c0) int X1^2 + c5, x~ = X1 x + int X1^2 (c1 A2 + c3) + c4,
    v~ = c0 (v - c1 X1 x^2/(4 lambda) + X2 x + int X2^2 + (c1/2) int (f0/lambda) X1) + c6.
    """
    c0, c1, c2, c3, c4, c5, c6 = map(_f, (p.c0, p.c1, p.c2, p.c3, p.c4, p.c5, p.c6))
    core = _QuadCore(c0, c1, c2, c3, c4, c5, dec, t0, tol)
    X1, X2, inv_lam = core.X1, core.X2, core.inv_lam
    IW1 = integral(X2 ** 2, t0, tol)
    IW2 = integral(core.f0 * inv_lam * X1, t0, tol)

    def shift(t, x):
        x1 = X1(t)
        return -c1 * x1 * x * x * inv_lam(t) / 4 + X2(t) * x + IW1(t) + 0.5 * c1 * IW2(t)

    def W(t, x, v):
        return c0 * (v + shift(t, x)) + c6

    inverse = (None, core.x_inverse, lambda t, x, z: (z - c6) / c0 - shift(t, x))
    return _nonlocal(core, W, inverse, Family.P, Group.P2, p, c0, t0, dec)


def build_c2(p: C2Params, dec, t0: float = 0.0, tol: float = DEFAULT_TOL) -> PointTransformation:
    """Conserved-form counterpart of build_p2: u~ = c0 (u/X1 - c1 x/(2 lambda) + (c1 A2 + c3)/2)."""
    c0, c1, c2, c3, c4, c5 = map(_f, (p.c0, p.c1, p.c2, p.c3, p.c4, p.c5))
    core = _QuadCore(c0, c1, c2, c3, c4, c5, dec, t0, tol)
    X1, B, inv_lam = core.X1, core.B, core.inv_lam

    def W(t, x, u):
        return c0 * (u / X1(t) - 0.5 * c1 * x * inv_lam(t) + 0.5 * B(t))

    def W_inv(t, x, z):
        return X1(t) * (z / c0 + 0.5 * c1 * x * inv_lam(t) - 0.5 * B(t))

    return _nonlocal(core, W, (None, core.x_inverse, W_inv), Family.C, Group.C2, p, c0, t0, dec)


def _nonlocal(core, W, inverse, family, group, p, c0, t0, dec):
    T, X = core.T, core.X
    inv = (lambda s: _solve_scalar(T, s, _t_guess(core, s), "t~"),) + tuple(inverse[1:])
    excl = [core.pole] if core.pole is not None else []
    src = dec if isinstance(dec, ex.Expr) else None
    out = PointTransformation(T, X, W, family, group=group, params=p, exclusions=excl, f_scale=c0,
                              inverse=inv, t0=t0, f=src)
    out.core = core
    return out


def _t_guess(core, s):
    c0, c1, c2, c3, c4, c5 = core.c
    # exact when c1 = 0 and lambda = 1: T = t/(c0 c2^2) + c5
    return (value_of(s) - c5) * c0 * (c2 * c2 if c2 != 0 else 1.0)


def build_p2_linear(p: P2LinearParams, dec, t0: float = 0.0, tol: float = DEFAULT_TOL) -> PointTransformation:
    """Moebius-form transformations for f = f1(t) x + f0(t) (no x^2 term), F = int f1.

    t~ = (a t + b)/(g t + d),
    x~ = k (x + nu (a t + b)/Delta)/(g t + d) + g k int F/(g t + d)^2 + c4,
    v~ = (k^2/Delta)(v - g x^2/(4(g t + d)) + (g F + nu) x/(2(g t + d))
          + 1/4 int ((g F + nu)/(g t + d))^2 + (g/2) int f0/(g t + d)) + c5.
    """
    f2, f1, f0 = _decomposition(dec)
    if not f2.is_zero():
        raise ParameterError("the Moebius form needs f without an x^2 term")
    a, b, g, d, k, nu, c4, c5 = map(_f, (p.alpha, p.beta, p.gamma, p.delta, p.kappa, p.nu, p.c4, p.c5))
    D = a * d - b * g
    s_expr = TimeFunction(expr=ex.add(ex.mul(_const(g), ex.Var("t")), _const(d)))
    F = integral(f1, t0, tol)
    G = g * F + nu
    IX = integral(F / s_expr ** 2, t0, tol) if g != 0 else TimeFunction(expr=ex.ZERO)
    IW1 = integral((G / s_expr) ** 2, t0, tol)
    IW2 = integral(f0 / s_expr, t0, tol) if g != 0 else TimeFunction(expr=ex.ZERO)
    c = k * k / D

    def T(t):
        return (a * t + b) / (g * t + d)

    def X(t, x):
        return k * (x + nu * (a * t + b) / D) / (g * t + d) + g * k * IX(t) + c4

    def shift(t, x):
        s = g * t + d
        return -g * x * x / (4 * s) + G(t) * x / (2 * s) + 0.25 * IW1(t) + 0.5 * g * IW2(t)

    def W(t, x, v):
        return c * (v + shift(t, x)) + c5

    inverse = (
        _mobius_t_inverse(a, b, g, d),
        lambda t, y: (y - c4 - g * k * IX(t)) * (g * t + d) / k - nu * (a * t + b) / D,
        lambda t, x, z: (z - c5) / c - shift(t, x),
    )
    excl = [_pole(g, d)] if g != 0 else []
    src = dec if isinstance(dec, ex.Expr) else None
    return PointTransformation(T, X, W, Family.P, group=Group.P2_LINEAR, params=p, exclusions=excl, f_scale=c,
                               inverse=inverse, t0=t0, f=src)


# ---------------------------------------------------------------------------
# dispatch


def build(params, f=None, t0: float = 0.0, tol: float = DEFAULT_TOL) -> PointTransformation:
    """Build any group's transformation; f is needed by p3 (constant), p2, p2-linear and c2."""
    if isinstance(params, dict):
        params, extras = params_from_dict(params)
        t0 = extras["t0"] if extras["t0"] is not None else t0
        f = f if f is not None else extras["f"]
    group = params.group
    if group in NEEDS_F and f is None:
        raise ParameterError(f"group {group.value} needs the arbitrary element f")
    if isinstance(f, str):
        f = ex.parse(f)
    if group is Group.USUAL_POT:
        return build_usual_pot(params)
    if group is Group.C_USUAL:
        return build_c_usual(params)
    if group is Group.GBE:
        return build_gbe(params)
    if group is Group.P3:
        value = f if isinstance(f, (int, float)) else ex.as_constant(f, ("t", "x"), default_box())
        if value is None:
            raise ParameterError("group p3 needs a constant f")
        return build_p3(params, float(value))
    dec = decompose_quadratic(f)
    builder = {Group.P2: build_p2, Group.P2_LINEAR: build_p2_linear, Group.C2: build_c2}[group]
    out = builder(params, dec, t0, tol)
    out.f = f
    return out


# ---------------------------------------------------------------------------
# projective normalization


def rescale_projective(p, s: float):
    """Multiply the projective tuple by s, compensating the parameters that must follow."""
    if s == 0:
        raise ParameterError("scale factor must be nonzero")
    if isinstance(p, P3Params):
        k = p.k / math.sqrt(abs(s)) if p.gamma != 0 else p.k
        return replace(p, alpha=s * p.alpha, beta=s * p.beta, gamma=s * p.gamma, delta=s * p.delta,
                       kappa=s * p.kappa, k=k)
    if isinstance(p, P2LinearParams):
        return replace(p, alpha=s * p.alpha, beta=s * p.beta, gamma=s * p.gamma, delta=s * p.delta,
                       kappa=s * p.kappa, nu=s * p.nu)
    if isinstance(p, GBEParams):
        return replace(p, alpha=s * p.alpha, beta=s * p.beta, gamma=s * p.gamma, delta=s * p.delta,
                       kappa=s * p.kappa, mu1=s * p.mu1, mu0=s * p.mu0)
    raise ParameterError(f"group {p.group.value} has no projective parameters")


def normalize_projective(p):
    """Canonical representative: the first nonzero of (alpha, beta, gamma, delta) becomes 1."""
    if not isinstance(p, (P3Params, P2LinearParams, GBEParams)):
        raise ParameterError(f"group {p.group.value} has no projective parameters")
    for v in (p.alpha, p.beta, p.gamma, p.delta):
        if v != 0:
            if v == 1:
                return p
            s = Fraction(1) / v if isinstance(v, (int, Fraction)) else 1.0 / v
            return rescale_projective(p, s)
    raise ParameterError("projective tuple is identically zero")


# ---------------------------------------------------------------------------
# group laws


def compose_params(p1, p2):
    """Parameters of 'apply p1, then p2' for groups with a closed-form law, else None."""
    if type(p1) is not type(p2):
        return None
    if isinstance(p1, (UsualPotParams, CUsualParams)):
        a1, b1, k1, m1, n1 = p1.alpha, p1.beta, p1.kappa, p1.mu1, p1.mu0
        a2, b2, k2, m2, n2 = p2.alpha, p2.beta, p2.kappa, p2.mu1, p2.mu0
        point = dict(alpha=a2 * a1, beta=a2 * b1 + b2, kappa=k2 * k1,
                     mu1=m1 + m2 * a1 / k1, mu0=n1 + (m2 * b1 + n2) / k1)
        if isinstance(p1, CUsualParams):
            return CUsualParams(**point)
        nu = p1.nu + (a1 / (k1 * k1)) * (m2 * k1 * n1 / 2 + m2 * m2 * b1 / 4 + p2.nu)
        return UsualPotParams(nu=nu, **point)
    if isinstance(p1, GBEParams):
        m1, m2 = p1.matrix(), p2.matrix()
        prod = [[sum(m2[i][j] * m1[j][l] for j in range(3)) for l in range(3)] for i in range(3)]
        return GBEParams.from_matrix(prod)
    return None


def invert_params(p):
    if isinstance(p, (UsualPotParams, CUsualParams)):
        a, b, k, m1, m0 = p.alpha, p.beta, p.kappa, p.mu1, p.mu0
        i_m1 = -m1 * k / a
        point = dict(alpha=1 / a, beta=-b / a, kappa=1 / k, mu1=i_m1, mu0=-k * m0 + m1 * k * b / a)
        if isinstance(p, CUsualParams):
            return CUsualParams(**point)
        nu = -k * k * p.nu / a - i_m1 * k * m0 / 2 - i_m1 * i_m1 * b / 4
        return UsualPotParams(nu=nu, **point)
    if isinstance(p, GBEParams):
        a, b, g, d, k, m1, m0 = p.alpha, p.beta, p.gamma, p.delta, p.kappa, p.mu1, p.mu0
        D = a * d - b * g
        # inverse of [[a,0,b],[m1,k,m0],[g,0,d]] up to the factor k*D
        return GBEParams(alpha=d * k, beta=-b * k, gamma=-g * k, delta=a * k, kappa=D,
                         mu1=m0 * g - m1 * d, mu0=m1 * b - m0 * a)
    return None


_BUILDERS = {Group.USUAL_POT: build_usual_pot, Group.C_USUAL: build_c_usual, Group.GBE: build_gbe}


def _agreement_points(box, count=20):
    box = box if box is not None else default_box()
    return box.points(n=count, seed=box.seed + 7919, margin=1e-3)


def assert_agreement(A: PointTransformation, B: PointTransformation, box=None, tol=1e-8, what="maps"):
    checked = 0
    for t, x, w in _agreement_points(box):
        if not (A.in_domain(t, x, w) and B.in_domain(t, x, w)):
            continue
        va, vb = A(t, x, w), B(t, x, w)
        for u, v in zip(va, vb):
            if abs(u - v) > tol * (1 + abs(u)):
                raise VerificationError(f"{what} disagree at {(t, x, w)}: {va} vs {vb}")
        checked += 1
    return checked


def compose(T1: PointTransformation, T2: PointTransformation, box=None, check: bool = True) -> PointTransformation:
    """Apply T1, then T2."""
    if T1.family is not T2.family:
        raise ParameterError("cannot compose transformations of different families")
    if check and box is not None:
        pts = [p for p in _agreement_points(box) if T1.in_domain(*p)]
        if pts and not any(T2.in_domain(*T1(*p)) for p in pts):
            raise DomainError("the image of the first transformation misses the domain of the second")

    def T(t):
        return T2.T(T1.T(t))

    def X(t, x):
        return T2.X(T1.T(t), T1.X(t, x))

    def W(t, x, w):
        return T2.W(T1.T(t), T1.X(t, x), T1.W(t, x, w))

    excl = list(T1.exclusions)
    for name, q in T2.exclusions:
        excl.append((name + " (second)", lambda t, x, w, q=q: q(T1.T(t), T1.X(t, x), T1.W(t, x, w))))
    scale = T1.f_scale * T2.f_scale if T1.f_scale is not None and T2.f_scale is not None else None
    inverse = None
    if T1.inverse is not None and T2.inverse is not None:
        def it(s):
            return T1.inverse[0](T2.inverse[0](s))

        def ix(t, y):
            return T1.inverse[1](t, T2.inverse[1](T1.T(t), y))

        def iw(t, x, z):
            return T1.inverse[2](t, x, T2.inverse[2](T1.T(t), T1.X(t, x), z))

        inverse = (it, ix, iw)
    out = PointTransformation(T, X, W, T1.family, exclusions=excl, f_scale=scale, inverse=inverse,
                              name=f"({T1.name}) then ({T2.name})")
    if T1.params is not None and T2.params is not None:
        law = compose_params(T1.params, T2.params)
        if law is not None:
            rebuilt = _BUILDERS[law.group](law)
            if check:
                assert_agreement(out, rebuilt, box, what="composition and group law")
            rebuilt.name = out.name
            return rebuilt
    return out


def invert(T: PointTransformation, box=None, check: bool = True) -> PointTransformation:
    """Inverse transformation: closed-form parameters for affine/Moebius groups, else componentwise."""
    if T.params is not None:
        ip = invert_params(T.params)
        if ip is not None:
            return _BUILDERS[ip.group](ip)
    inv = T.inverse or (None, None, None)

    def it(s):
        if inv[0] is not None:
            return inv[0](s)
        return _solve_scalar(T.T, s, value_of(s), "T")

    def ix(t, y):
        if inv[1] is not None:
            return inv[1](t, y)
        return _solve_scalar(lambda x: T.X(t, x), y, value_of(y), "X")

    def iw(t, x, z):
        if inv[2] is not None:
            return inv[2](t, x, z)
        return _solve_scalar(lambda w: T.W(t, x, w), z, value_of(z), "W")

    def Ti(s):
        return it(s)

    def Xi(s, y):
        return ix(it(s), y)

    def Wi(s, y, z):
        t = it(s)
        x = ix(t, y)
        return iw(t, x, z)

    excl = [(name, lambda s, y, z, q=q: q(Ti(s), Xi(s, y), Wi(s, y, z))) for name, q in T.exclusions]
    scale = 1 / T.f_scale if T.f_scale is not None else None
    return PointTransformation(Ti, Xi, Wi, T.family, exclusions=excl, f_scale=scale,
                               inverse=(T.T, T.X, T.W), name=f"inverse of {T.name}")


def pushforward_f(T: PointTransformation, f, box: Optional[ex.SampleBox] = None, check: bool = True) -> Coefficient:
    """f~(t~, x~) = (X_x^2/T_t) f at the numerically inverted point.

    When T carries a closed-form inverse, the closed-form f~ is computed too and
    the two are required to agree within 1e-8 at the images of sample points.
    """
    f = Coefficient.lift(f)
    box = box if box is not None else default_box()
    pts = [p for p in _agreement_points(box, 30) if T.in_domain(*p)]
    if not pts:
        raise DomainError("no point of the box lies in the domain of the transformation")
    signs_t, signs_x = set(), set()
    for t, x, w in pts:
        d = T.derivatives(t, x, w, order=1)
        signs_t.add(d["T_t"] > 0)
        signs_x.add(d["X_x"] > 0)
    if len(signs_t) > 1 or len(signs_x) > 1:
        raise InversionError("transformation is not monotone on the box")

    images = [(T.point(t, x), (t, x)) for t, x, _ in pts]

    def ft(s, y):
        sv, yv = value_of(s), value_of(y)
        guess = min(images, key=lambda im: abs(im[0][0] - sv) + abs(im[0][1] - yv))[1]
        t = _solve_scalar(T.T, s, guess[0], "T")
        x = _solve_scalar(lambda xx: T.X(t, xx), y, guess[1], "X")
        scale = T.f_scale if T.f_scale is not None else T.scale_factor(value_of(t), value_of(x))
        return float(scale) * f(t, x)

    generic = Coefficient(fn=ft)
    if check and (T.inverse is not None or T.inverse_exprs is not None):
        closed = T.target_coefficient(f)
        for t, x, w in pts:
            s, y = T.point(t, x)
            try:
                a, b = generic(s, y), closed(s, y)
            except (DomainError, InversionError):
                continue
            if abs(a - b) > 1e-8 * (1 + abs(a)):
                raise VerificationError(f"generic and closed-form f~ disagree at ({s}, {y}): {a} vs {b}")
    return generic

