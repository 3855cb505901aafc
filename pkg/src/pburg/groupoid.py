"""Jet pushforward, admissibility verification and equivalence decisions.

A transformation is admissible from f_src to f_tgt when it carries every
solution of the source equation to a solution of the target.  We check this
on sampled jets: close the jet on the source equation (solve for w_t), push
it forward with the exact prolongation formulas, and evaluate the target
residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from . import expr as ex
from .classes import (Coefficient, Equation, Family, Jet2, Subclass, classify, default_box, residual_values,
                      solve_wt)
from .errors import (ClassificationError, DomainError, DomainStarvationError, IndeterminateError,
                     InversionError, ParameterError, VerificationError)
from .report import QUAD_TOL, JetSampler, VerificationReport, tolerance_for
from .taylor import Taylor
from .transforms import (CUsualParams, GBEParams, P3Params, PointTransformation, UsualPotParams,
                         build_c_usual, build_gbe, build_p3, build_usual_pot)

_SKIP = (DomainError, InversionError, ZeroDivisionError, OverflowError)


# ---------------------------------------------------------------------------
# prolongation


def pushforward_jet(T: PointTransformation, jet: Jet2) -> Jet2:
    """Transformed second-order jet.

    w~_x~   = (W_x + W_w w_x)/X_x
    w~_x~x~ = (W_xx + 2 W_xw w_x + W_ww w_x^2 + W_w w_xx)/X_x^2 - X_xx (W_x + W_w w_x)/X_x^3
    w~_t~   = (W_t + W_w w_t - (W_x + W_w w_x) X_t/X_x)/T_t
    """
    d = T.derivatives(jet.t, jet.x, jet.w, order=2)
    Tt, Xt, Xx, Xxx = d["T_t"], d["X_t"], d["X_x"], d["X_xx"]
    if Tt == 0 or Xx == 0:
        raise DomainError("degenerate transformation (T_t or X_x vanishes)")
    Ww = d["W_w"]
    wx, wxx = jet.w_x, jet.w_xx
    Dx = d["W_x"] + Ww * wx
    w_x = Dx / Xx
    w_xx = (d["W_xx"] + 2 * d["W_xw"] * wx + d["W_ww"] * wx * wx + Ww * wxx) / Xx ** 2 - Xxx * Dx / Xx ** 3
    w_t = (d["W_t"] + Ww * jet.w_t - Dx * Xt / Xx) / Tt
    return Jet2(d["T"], d["X"], d["W"], w_t, w_x, w_xx)


def pushforward_jet3(T: PointTransformation, jet: Jet2) -> Jet2:
    """Transformed jet including w~_t~x~ and w~_x~x~x~.

    Uses the local polynomial extension of the jet and the total derivative
    operators D_x~ = D_x / X_x and D_t~ = (D_t - X_t D_x / X_x)/T_t.
    """
    if jet.w_tx is None or jet.w_xxx is None:
        raise ParameterError("a third-order jet needs w_tx and w_xxx")
    ts, xs = jet.seeds(3)
    w = jet.field(3)
    Tv, Xv, Wv = T.T(ts), T.X(ts, xs), T.W(ts, xs, w)
    Tv = Tv if isinstance(Tv, Taylor) else Taylor.constant(Tv, ts.space)
    Tt = Tv.diff(0)
    Xt, Xx = Xv.diff(0), Xv.diff(1)

    def Dx(q):
        return q.diff(1) / Xx

    def Dt(q):
        return (q.diff(0) - Xt * q.diff(1) / Xx) / Tt

    wx = Dx(Wv)
    wxx = Dx(wx)
    return Jet2(Tv.value, Xv.value, Wv.value, Dt(Wv).value, wx.value, wxx.value,
                w_tx=Dt(wx).value, w_xxx=Dx(wxx).value)


# ---------------------------------------------------------------------------
# verification


def _target(T: PointTransformation, f_src: Coefficient, f_tgt, family: Family):
    """Evaluator (t, x, t~, x~) -> (f~, f~_x~)."""
    if f_tgt is None:
        def pulled(t, x, tt, xt):
            ts, xs = Taylor.seed((t, x), 2)
            Tv, Xv = T.T(ts), T.X(ts, xs)
            Tt = Tv.diff(0)
            Xx = Xv.diff(1)
            g = Xx * Xx * f_src(ts.truncate(1), xs.truncate(1)) / Tt
            return g.value, g.d(1) / Xx.value
        return pulled
    coef = Coefficient.lift(f_tgt)

    def direct(t, x, tt, xt):
        value = float(coef(tt, xt))
        deriv = float(coef.x_derivative(tt, xt)) if family is Family.C else 0.0
        return value, deriv
    return direct


def _sampler(sampler, box, n, seed):
    if sampler is not None:
        return sampler
    return JetSampler(box if box is not None else default_box(), n, seed)


def verify_admissible(T: PointTransformation, f_src, f_tgt=None, family=None, sampler: Optional[JetSampler] = None,
                      *, box=None, n: int = 200, seed: int = 0, quad_tol: float = QUAD_TOL,
                      check_source: bool = True) -> VerificationReport:
    """Residual of the target equation at pushed-forward on-shell jets.

    ``f_tgt`` may be None (use the rule f~ = X_x^2 f/T_t), an Expr/string in the
    new coordinates (t, x meaning t~, x~), or a callable f~(t~, x~).
    """
    family = Family.of(family) if family is not None else T.family
    sampler = _sampler(sampler, box, n, seed)
    src = Equation(family, f_src, sampler.box, check=check_source)
    target = _target(T, src.f, f_tgt, family)
    jets = sampler.draw(2, accept=T.in_domain)
    residuals, points, biggest, rejected = [], [], 0.0, 0
    for jet in jets:
        try:
            jet = jet.replace(w_t=solve_wt(src, jet))
            tj = pushforward_jet(T, jet)
            ft, ftx = target(jet.t, jet.x, tj.t, tj.x)
            r = residual_values(family, tj.w, tj.w_t, tj.w_x, tj.w_xx, ft, ftx)
        except _SKIP:
            rejected += 1
            continue
        residuals.append(float(r))
        points.append(jet.to_dict())
        biggest = max(biggest, jet.magnitude(), tj.magnitude())
    if 2 * len(residuals) < sampler.n:
        raise DomainStarvationError(f"only {len(residuals)} of {sampler.n} jets could be transformed")
    report = VerificationReport.from_samples(residuals, tolerance_for(biggest, quad_tol), points,
                                             label=f"admissibility of {T.name}")
    report.details["rejected"] = rejected
    return report


def check_classifying_equations(T: PointTransformation, f, f_tgt=None, sampler: Optional[JetSampler] = None,
                                *, box=None, n: int = 200, seed: int = 0,
                                quad_tol: float = QUAD_TOL) -> VerificationReport:
    """Evaluate the determining equations of P-family point transformations.

    With s = X_x^2/T_t and r = X_x X_xx/T_t:
      W_w^2 - s W_w + f s W_ww
      2 W_x W_w - (X_t X_x/T_t) W_w + 2 f s W_xw - f r W_w
      s W_t - (X_t X_x/T_t) W_x + W_x^2 + f s W_xx - f r W_x
    and, when f_tgt is given, f_tgt(T, X) - s f.
    """
    sampler = _sampler(sampler, box, n, seed)
    f = Coefficient.lift(f)
    tgt = Coefficient.lift(f_tgt) if f_tgt is not None else None
    residuals, points, biggest = [], [], 0.0
    for jet in sampler.draw(2, accept=T.in_domain):
        try:
            d = T.derivatives(jet.t, jet.x, jet.w, order=2)
            fv = float(f(jet.t, jet.x))
            tt = d["T_t"]
            s = d["X_x"] ** 2 / tt
            q = d["X_t"] * d["X_x"] / tt
            r = d["X_x"] * d["X_xx"] / tt
            Ww, Wx = d["W_w"], d["W_x"]
            eqs = [
                Ww * Ww - s * Ww + fv * s * d["W_ww"],
                2 * Wx * Ww - q * Ww + 2 * fv * s * d["W_xw"] - fv * r * Ww,
                s * d["W_t"] - q * Wx + Wx * Wx + fv * s * d["W_xx"] - fv * r * Wx,
            ]
            if tgt is not None:
                eqs.append(float(tgt(d["T"], d["X"])) - s * fv)
        except _SKIP:
            continue
        residuals.append(max(abs(e) for e in eqs))
        points.append(jet.to_dict())
        biggest = max(biggest, jet.magnitude(), max(abs(v) for v in d.values()))
    if 2 * len(residuals) < sampler.n:
        raise DomainStarvationError(f"only {len(residuals)} of {sampler.n} points could be evaluated")
    return VerificationReport.from_samples(residuals, tolerance_for(biggest, quad_tol), points,
                                           label=f"classifying equations of {T.name}")


# ---------------------------------------------------------------------------
# subclasses


def classify_at_points(family, f, points, tol: float = 1e-7) -> Subclass:
    """Classification of f (Expr or callable) from exact derivatives at given (t, x) points."""
    family = Family.of(family)
    if family is Family.L:
        return Subclass.L
    coef = Coefficient.lift(f)
    cubic, grad, used = 0.0, 0.0, 0
    scale = 0.0
    for t, x in points:
        try:
            ts, xs = Taylor.seed((t, x), 3)
            v = coef(ts, xs)
        except _SKIP:
            continue
        if not isinstance(v, Taylor):
            scale = max(scale, abs(float(v)))
            used += 1
            continue
        used += 1
        scale = max(scale, abs(v.value))
        cubic = max(cubic, abs(v.d(1, 1, 1)))
        grad = max(grad, abs(v.d(0)), abs(v.d(1)))
    if 2 * used < len(points) or used == 0:
        raise ClassificationError("too few points inside the domain of f")
    eps = tol * (1.0 + scale)
    if family is Family.C:
        return Subclass.C2 if cubic <= eps else Subclass.C1
    if cubic > eps:
        return Subclass.P1
    return Subclass.P3 if grad <= eps else Subclass.P2


def check_subclass_preserved(T: PointTransformation, f_src, f_tgt=None, family=None,
                             box: Optional[ex.SampleBox] = None) -> bool:
    """Compare subclasses of source and target; a mismatch means a broken transformation."""
    family = Family.of(family) if family is not None else T.family
    box = box if box is not None else default_box()
    src = Coefficient.lift(f_src)
    pts = [(t, x) for t, x, w in box.points(n=30, seed=box.seed + 1, margin=1e-3) if T.in_domain(t, x, w)]
    if src.expr is not None:
        s_src = classify(family, src.expr, box)
    else:
        s_src = classify_at_points(family, src, pts)
    tgt = T.target_coefficient(src) if f_tgt is None else Coefficient.lift(f_tgt)
    images = []
    for t, x in pts:
        try:
            images.append(tuple(float(v) for v in T.point(t, x)))
        except _SKIP:
            continue
    s_tgt = classify_at_points(family, tgt, images)
    return s_src == s_tgt


# ---------------------------------------------------------------------------
# admissible transformations and equivalence


@dataclass
class AdmissibleTransformation:
    source: Equation
    target: object
    transformation: PointTransformation
    report: VerificationReport


def admissible(T: PointTransformation, f_src, f_tgt=None, family=None, **kwargs) -> AdmissibleTransformation:
    """Verify and wrap; raises VerificationError unless the check passes."""
    family = Family.of(family) if family is not None else T.family
    report = verify_admissible(T, f_src, f_tgt, family, **kwargs)
    if not report.passed:
        raise VerificationError(f"transformation is not admissible: {report}")
    box = kwargs.get("box") or (kwargs["sampler"].box if kwargs.get("sampler") else None)
    return AdmissibleTransformation(Equation(family, f_src, box, check=False), f_tgt, T, report)


@dataclass
class EquivalenceVerdict:
    verdict: str  # equivalent | inequivalent | undecided
    reason: str
    witness: Optional[AdmissibleTransformation] = None
    subclasses: tuple = ()

    def to_dict(self) -> dict:
        out = {"verdict": self.verdict, "reason": self.reason,
               "subclasses": [s.value for s in self.subclasses]}
        if self.witness is not None:
            out["witness"] = self.witness.transformation.to_dict()
            out["witness_report"] = self.witness.report.to_dict()
        return out


def _as_expr(f):
    if isinstance(f, str):
        return ex.parse(f)
    if isinstance(f, (int, float)):
        return ex.Const(f)
    return f


def _try_witness(T, f1, f2, family, box, seed):
    try:
        report = verify_admissible(T, f1, f2, family, box=box, n=200, seed=seed)
    except (DomainStarvationError, DomainError, InversionError):
        return None
    if not report.passed:
        return None
    return AdmissibleTransformation(Equation(family, f1, box, check=False), f2, T, report)


def _search_points(box, seed, count=24):
    return [(t, x) for t, x, _ in box.points(n=count, seed=seed + 101, margin=0.05)]


def _usual_search(f1, f2, family, box, budget, seed):
    """Find (alpha, beta, kappa, mu1, mu0) with f2(alpha t + beta, kappa (x + mu1 t + mu0)) = (kappa^2/alpha) f1."""
    c1, c2 = Coefficient.lift(f1), Coefficient.lift(f2)
    pts = _search_points(box, seed)
    base = [float(c1(t, x)) for t, x in pts]

    def unpack(z, signs):
        return signs[0] * math.exp(z[0]), z[1], signs[1] * math.exp(z[2]), z[3], z[4]

    def residuals(z, signs):
        a, b, k, m1, m0 = unpack(z, signs)
        out = []
        for (t, x), f1v in zip(pts, base):
            try:
                v = float(c2(a * t + b, k * (x + m1 * t + m0))) * a / (k * k)
            except _SKIP:
                v = 1e3
            out.append((v - f1v) / (1.0 + abs(f1v)))
        return out

    def build(z, signs):
        a, b, k, m1, m0 = unpack(z, signs)
        if family is Family.C:
            return build_c_usual(CUsualParams(a, b, k, m1, m0))
        return build_usual_pot(UsualPotParams(a, b, k, m1, m0, 0.0))

    return _multistart(residuals, build, 5, budget, seed, f1, f2, family, box)


def _gbe_search(f1, f2, family, box, budget, seed):
    """Find GBE parameters with f2(T, X) = (kappa^2/Delta) f1."""
    c1, c2 = Coefficient.lift(f1), Coefficient.lift(f2)
    pts = _search_points(box, seed)
    base = [float(c1(t, x)) for t, x in pts]

    def residuals(z, signs):
        a, b, g, d, k, m1, m0 = z
        D = a * d - b * g
        out = []
        for (t, x), f1v in zip(pts, base):
            s = g * t + d
            try:
                if abs(s) < 1e-6 or abs(k) < 1e-9:
                    raise DomainError("pole")
                v = float(c2((a * t + b) / s, (k * x + m1 * t + m0) / s)) * D / (k * k)
            except _SKIP:
                v = 1e3
            out.append((v - f1v) / (1.0 + abs(f1v)))
        out.append(a * a + b * b + g * g + d * d - 2.0)
        return out

    def build(z, signs):
        return build_gbe(GBEParams(*z))

    return _multistart(residuals, build, 7, budget, seed, f1, f2, family, box, around_identity=True)


def _multistart(residuals, build, dim, budget, seed, f1, f2, family, box, around_identity=False):
    rng = np.random.default_rng(seed)
    sign_sets = [(1, 1)] if around_identity else [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    tries = 0
    identity = np.array([1, 0, 0, 1, 1, 0, 0], float) if around_identity else np.zeros(dim)
    while tries < budget:
        for signs in sign_sets:
            if tries >= budget:
                break
            z0 = identity if tries < len(sign_sets) else identity + rng.normal(0, 1, dim)
            tries += 1
            try:
                sol = optimize.least_squares(residuals, z0, args=(signs,), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                             max_nfev=400)
            except (ValueError, FloatingPointError):
                continue
            if not np.all(np.isfinite(sol.fun)) or np.max(np.abs(sol.fun)) > 1e-9:
                continue
            try:
                T = build([float(v) for v in sol.x], signs)
            except (ParameterError, DomainError):
                continue
            witness = _try_witness(T, f1, f2, family, box, seed)
            if witness is not None:
                return witness
    return None


def decide_equivalence(f1, f2, family="P", budget: int = 40, box: Optional[ex.SampleBox] = None,
                       box2: Optional[ex.SampleBox] = None, seed: int = 0,
                       candidate: Optional[PointTransformation] = None) -> EquivalenceVerdict:
    """Sound but incomplete decision of point equivalence of two equations of one family.

    Never claims equivalence without a verified witness; claims inequivalence
    only from a subclass mismatch.
    """
    family = Family.of(family)
    box = box if box is not None else default_box()
    box2 = box2 if box2 is not None else box
    f1, f2 = _as_expr(f1), _as_expr(f2)
    try:
        s1, s2 = classify(family, f1, box), classify(family, f2, box2)
    except (ClassificationError, IndeterminateError) as err:
        return EquivalenceVerdict("undecided", f"classification failed: {err}")
    subs = (s1, s2)
    if s1 != s2:
        return EquivalenceVerdict("inequivalent", f"subclasses differ ({s1.value} vs {s2.value})", None, subs)
    if candidate is not None:
        w = _try_witness(candidate, f1, f2, family, box, seed)
        if w is not None:
            return EquivalenceVerdict("equivalent", "supplied candidate verified", w, subs)
    if s1 is Subclass.P3:
        a = ex.as_constant(f1, ("t", "x"), box)
        b = ex.as_constant(f2, ("t", "x"), box2)
        T = build_p3(P3Params(alpha=a / b, beta=0, gamma=0, delta=1, kappa=1, mu1=0, mu0=0, k=1), a)
        w = _try_witness(T, f1, f2, family, box, seed)
        if w is None:
            raise VerificationError("constant-coefficient witness failed verification")
        return EquivalenceVerdict("equivalent", "constant coefficients are related by scaling t", w, subs)
    if s1 in (Subclass.P2, Subclass.C2):
        return EquivalenceVerdict("undecided", "no decision procedure for f quadratic in x without a candidate",
                                  None, subs)
    if s1 is Subclass.L:
        w = _gbe_search(f1, f2, family, box, budget, seed)
    else:
        w = _usual_search(f1, f2, family, box, budget, seed)
    if w is not None:
        return EquivalenceVerdict("equivalent", "template search found a verified transformation", w, subs)
    return EquivalenceVerdict("undecided", f"no verified transformation found within budget {budget}", None, subs)
