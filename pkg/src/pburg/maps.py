"""Maps between the classes: potentialization and linearization.

* C_f -> P_f through the potential v with v_x = u, v_t = -(u^2 + f u_x).
* L_f -> P_fhat for f quadratic in x: the potential v_x = lambda u with
  lambda = exp(int f_xx dt) solves v_t + v_x^2/(2 lambda) + f v_xx - f_x v_x = 0,
  and t^ = (1/2) int lambda, x^ = lambda x + int f1 lambda, v^ = v maps that to
  P_fhat with fhat = 2 lambda f.
* P_f with constant f -> backward heat equation through v~ = exp(v/f).

Every claim is checked as an off-shell jet identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import expr as ex
from .analysis import DEFAULT_TOL, ExpAntiderivative, TimeFunction, integral
from .classes import (Coefficient, Equation, Family, Jet2, conserved_current_check, decompose_quadratic, default_box,
                      residual_values)
from .errors import ClassificationError, DomainError, ParameterError
from .groupoid import pushforward_jet, pushforward_jet3
from .report import JetSampler, VerificationReport, tolerance_for
from .taylor import Taylor, exp, log
from .transforms import CUsualParams, PointTransformation, UsualPotParams, build_c_usual, build_usual_pot


@dataclass
class PotentialLink:
    source: Equation
    target_f: object
    lam: Optional[ExpAntiderivative] = None
    hat: Optional[PointTransformation] = None
    reports: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports.values())


def _box(box):
    return box if box is not None else default_box()


def potential_identity_discrepancy(f, jet: Jet2, scale: float = 1.0) -> float:
    """residual_C(u = s v_x) - D_x residual_P(v) at a third-order jet; zero for s = 1."""
    f = Coefficient.lift(f)
    ts, xs = jet.seeds(3)
    v = jet.field(3)
    vt, vx = v.diff(0), v.diff(1)
    vxx = vx.diff(1)
    fv = f(ts, xs)
    fv = fv.truncate(1) if isinstance(fv, Taylor) else fv
    res_p = vt + vx * vx + fv * vxx
    dx_res = res_p.d(1)
    u, ut, ux, uxx = (scale * q for q in (jet.w_x, jet.w_tx, jet.w_xx, jet.w_xxx))
    res_c = residual_values(Family.C, u, ut, ux, uxx, f(jet.t, jet.x), f.x_derivative(jet.t, jet.x))
    return float(res_c - dx_res)


def potentialize_C(f, box=None, n: int = 100, seed: int = 0, scale: float = 1.0) -> PotentialLink:
    """Check that u = v_x carries D_x of the P residual onto the C residual."""
    box = _box(box)
    eq = Equation(Family.C, f, box)
    jets = JetSampler(box, n, seed).draw(3)
    res = [potential_identity_discrepancy(eq.f, j, scale) for j in jets]
    biggest = max(j.magnitude() for j in jets)
    report = VerificationReport.from_samples(res, tolerance_for(biggest, rel=1e-9),
                                             [j.to_dict() for j in jets], label="C potentialization")
    return PotentialLink(eq, eq.f, reports={"identity": report})


def hat_transformation(f, t0: float = 0.0, tol: float = DEFAULT_TOL, box=None):
    """(hat map, lambda) for f with f_xxx = 0."""
    dec = decompose_quadratic(f, box)
    lam = ExpAntiderivative(dec.f2, 2.0, t0, tol)
    lam_fn = lam.as_function()
    half_int = integral(lam_fn, t0, tol)
    shift = integral(TimeFunction.lift(dec.f1) * lam_fn, t0, tol)

    def T(t):
        return 0.5 * half_int(t)

    def X(t, x):
        return lam(t) * x + shift(t)

    def W(t, x, v):
        return v

    hat = PointTransformation(T, X, W, Family.P, f_scale=None, t0=t0, name="hat map")
    return hat, lam


def intermediate_residual(f: Coefficient, lam, jet: Jet2) -> float:
    """v_t + v_x^2/(2 lambda) + f v_xx - f_x v_x."""
    return (jet.w_t + jet.w_x ** 2 / (2 * lam(jet.t)) + f(jet.t, jet.x) * jet.w_xx
            - f.x_derivative(jet.t, jet.x) * jet.w_x)


def potentialize_L(f, box=None, t0: float = 0.0, n: int = 100, seed: int = 0,
                   tol: float = DEFAULT_TOL) -> PotentialLink:
    """Build lambda and the hat map; verify the hat map and the lambda-current."""
    box = _box(box)
    f_expr = ex.parse(f) if isinstance(f, str) else f
    if isinstance(f_expr, (int, float)):
        f_expr = ex.Const(f_expr)
    eq = Equation(Family.L, f_expr, box)
    try:
        hat, lam = hat_transformation(f_expr, t0, tol, box)
    except ClassificationError as err:
        raise ParameterError(f"the hat map needs f quadratic in x: {err}") from None
    fc = eq.f
    jets = JetSampler(box, n, seed).draw(2, accept=hat.in_domain)
    res, rule, pts, biggest = [], [], [], 0.0
    for jet in jets:
        jet = jet.replace(w_t=jet.w_t - intermediate_residual(fc, lam, jet))
        tj = pushforward_jet(hat, jet)
        lv = lam(jet.t)
        fhat = 2 * lv * float(fc(jet.t, jet.x))
        res.append(residual_values(Family.P, tj.w, tj.w_t, tj.w_x, tj.w_xx, fhat))
        rule.append(fhat - hat.scale_factor(jet.t, jet.x) * float(fc(jet.t, jet.x)))
        pts.append(jet.to_dict())
        biggest = max(biggest, jet.magnitude(), tj.magnitude())
    tol_ = tolerance_for(biggest, tol)
    reports = {
        "hat": VerificationReport.from_samples(res, tol_, pts, label="hat map to P"),
        "fhat_rule": VerificationReport.from_samples(rule, tol_, pts, label="fhat = 2 lambda f"),
        "current": conserved_current_check(Family.L, fc, box, n, seed, lam=lam),
    }

    def fhat_source(t, x):
        return 2 * lam(t) * fc(t, x)

    return PotentialLink(eq, fhat_source, lam=lam, hat=hat, reports=reports)


def linearization(f_const: float) -> PointTransformation:
    """(t, x, v) -> (t, x, exp(v/f))."""
    if f_const == 0:
        raise ParameterError("f must be nonzero")
    f = float(f_const)
    return PointTransformation(lambda t: t, lambda t, x: x, lambda t, x, v: exp(v / f), Family.P,
                               f_scale=1.0, inverse=(lambda s: s, lambda t, y: y, lambda t, x, z: f * log(z)),
                               name="exponential linearization")


def delinearization(f_const: float) -> PointTransformation:
    """(t, x, v~) -> (t, x, f ln v~) on v~ > 0."""
    f = float(f_const)
    return PointTransformation(lambda t: t, lambda t, x: x, lambda t, x, z: f * log(z), Family.P,
                               f_scale=1.0, exclusions=[("v~", lambda t, x, z: z)], name="logarithm")


def heat_residual(f_const, jet: Jet2) -> float:
    return jet.w_t + f_const * jet.w_xx


def linearize_p3(f_const: float, box=None, n: int = 100, seed: int = 0):
    """The linearizing map and reports for heat(v~) = (v~/f) residual_P(v) and the inverse identity."""
    box = _box(box)
    T = linearization(f_const)
    f = float(f_const)
    jets = JetSampler(box, n, seed).draw(2)
    res, back, pts, biggest = [], [], [], 0.0
    inv = delinearization(f)
    for jet in jets:
        tj = pushforward_jet(T, jet)
        rp = residual_values(Family.P, jet.w, jet.w_t, jet.w_x, jet.w_xx, f)
        res.append(heat_residual(f, tj) - tj.w / f * rp)
        bj = pushforward_jet(inv, tj)
        back.append(max(abs(a - b) for a, b in zip(bj.entries(), jet.entries())))
        pts.append(jet.to_dict())
        biggest = max(biggest, jet.magnitude(), tj.magnitude())
    tol_ = tolerance_for(biggest, rel=1e-9)
    reports = {
        "identity": VerificationReport.from_samples(res, tol_, pts, label="heat linearization"),
        "inverse": VerificationReport.from_samples(back, tol_, pts, label="logarithm undoes exponential"),
    }
    return T, reports


def triangle_discrepancy(params, jets) -> float:
    """Transform-then-differentiate versus differentiate-then-transform.

    ``params`` gives (alpha, beta, kappa, mu1, mu0); the P side uses the
    potential-form group, the C side its conserved-form counterpart.
    """
    a, b, k, m1, m0 = params
    P = build_usual_pot(UsualPotParams(a, b, k, m1, m0, 0.0))
    C = build_c_usual(CUsualParams(a, b, k, m1, m0))
    worst = 0.0
    for j in jets:
        pj = pushforward_jet3(P, j)
        cj = pushforward_jet(C, Jet2(j.t, j.x, j.w_x, j.w_tx, j.w_xx, j.w_xxx))
        pairs = ((cj.t, pj.t), (cj.x, pj.x), (cj.w, pj.w_x), (cj.w_x, pj.w_xx), (cj.w_xx, pj.w_xxx),
                 (cj.w_t, pj.w_tx))
        worst = max(worst, max(abs(p - q) for p, q in pairs))
    return worst


def triangle_check(params, box=None, n: int = 50, seed: int = 0) -> VerificationReport:
    box = _box(box)
    jets = JetSampler(box, n, seed).draw(3)
    res = [triangle_discrepancy(params, [j]) for j in jets]
    return VerificationReport.from_samples(res, 1e-8, [j.to_dict() for j in jets], label="potentialization triangle")
