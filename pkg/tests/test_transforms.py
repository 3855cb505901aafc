import json
import math

import numpy as np
import pytest

from helpers import BOX, SOURCE_F, random_params, random_transformation
from pburg import expr as ex
from pburg.errors import ParameterError
from pburg.groupoid import verify_admissible
from pburg.transforms import (C2Params, CUsualParams, GBEParams, Group, P2LinearParams, P2Params, P3Params,
                              UsualPotParams, build, build_c_usual, build_gbe, build_p3, build_usual_pot, compose,
                              compose_params, heat_solution, identity, invert, normalize_projective,
                              params_from_dict, pushforward_f, rescale_projective)

POINTS = BOX.points(n=20, seed=9, margin=1e-3)


def close(a, b, tol=1e-12):
    return all(abs(p - q) <= tol * (1 + abs(p)) for p, q in zip(a, b))


# ---------------------------------------------------------------------------
# builders


def test_usual_pot_examples():
    T = build_usual_pot(UsualPotParams())
    assert T(0.3, 0.7, 1.1) == (0.3, 0.7, 1.1) and T.f_scale == 1
    T = build_usual_pot(UsualPotParams(alpha=4, kappa=2))
    assert T(0.3, 0.7, 1.1) == (1.2, 1.4, 1.1) and T.f_scale == 1
    T = build_usual_pot(UsualPotParams(mu1=2))
    s, y, z = T(0.3, 0.7, 1.1)
    assert (s, y) == (0.3, 0.7 + 0.6) and z == pytest.approx(1.1 + 0.7 + 0.3)


def test_parameter_invariants():
    with pytest.raises(ParameterError):
        UsualPotParams(alpha=0)
    with pytest.raises(ParameterError):
        GBEParams(alpha=1, beta=2, gamma=1, delta=2)
    with pytest.raises(ParameterError):
        P2Params(c1=0, c2=0)
    with pytest.raises(ParameterError):
        P3Params(k=0)


def test_p3_identity_and_moebius_examples():
    T = build_p3(P3Params(), -1.0)
    assert close(T(0.4, 0.9, 0.3), (0.4, 0.9, 0.3))
    T = build_p3(P3Params(alpha=0, beta=1, gamma=1, delta=0), -1.0)
    assert T.f_scale == -1  # f~ = (kappa^2/Delta) f = 1
    for t, x, v in POINTS:
        expected = (1 / t, x / t, 0.5 * math.log(t) + x * x / (4 * t) - v)
        assert close(T(t, x, v), expected)


def test_p3_symmetry_specialization():
    a, b, g, d = 1.2, 0.3, 0.4, 1.5
    p = P3Params(a, b, g, d, math.sqrt(a * d - b * g), 0.2, -0.1, 0.8, {"kind": "linear", "scale": 0.3})
    T = build(p, "-1")
    assert T.f_scale == pytest.approx(1.0)
    assert verify_admissible(T, "-1", "-1", "P", box=BOX).passed


@pytest.mark.parametrize("kind, params", [("zero", {}), ("constant", {"value": 2}), ("linear", {}),
                                          ("quadratic", {}), ("cubic", {}), ("exponential", {"a": 1}),
                                          ("exponential", {"a": -0.5, "scale": 3})])
@pytest.mark.parametrize("f", [1.0, -0.7])
def test_heat_solutions_solve_heat_equation(kind, params, f):
    F = heat_solution(kind, params, f).expr
    check = ex.add(ex.differentiate(F, "t"), ex.mul(ex.Const(f), ex.derivative(F, "x", "x")))
    assert ex.probably_zero(check, BOX)


def test_heat_solution_examples():
    assert ex.evaluate(heat_solution("quadratic", {}, 1.0).expr, {"t": 0.5, "x": 2}) == 3
    assert ex.evaluate(heat_solution("exponential", {"a": 1}, 1.0).expr, {"t": 0.5, "x": 2}) == pytest.approx(
        math.exp(1.5))
    assert heat_solution("zero").expr == ex.ZERO
    assert heat_solution("expr", {"expr": "x^2 - 2*t"}, 1.0).kind == "expr"
    with pytest.raises(ParameterError):
        heat_solution("expr", {"expr": "x^2 + t"}, 1.0)


def test_p2_reduces_to_usual_pot():
    T = build(P2Params(c0=2, c1=0, c2=1), "x^2 + t*x + 1")
    U = build_usual_pot(UsualPotParams(alpha=0.5))
    for pt in POINTS:
        assert close(T(*pt), U(*pt))
    assert T.f_scale == 2


def test_p2_lambda_for_x_squared():
    T = build(P2Params(c0=1, c1=1, c2=1), "x^2")
    lam = T.core.lam
    assert lam(0.0) == 1.0 and lam(1.0) == pytest.approx(math.e ** 2, rel=1e-14)
    assert verify_admissible(T, "x^2", None, "P", box=BOX, n=100).passed


def test_p2_linear_affine_case_matches_usual_pot():
    a, b, k, nu, c4, c5 = 1.5, 0.2, 0.8, 0.3, 0.1, -0.4
    T = build(P2LinearParams(a, b, 0, 1, k, nu, c4, c5), "t*x + 2")
    U = build_usual_pot(UsualPotParams(a, b, k, nu, nu * b / a + c4 / k, c5 * a / (k * k)))
    for pt in POINTS:
        assert close(T(*pt), U(*pt))


def test_p2_linear_inversion_example_is_admissible():
    # the antiderivatives of 1/t need a base point away from the pole t = 0
    T = build(P2LinearParams(0, 1, 1, 0, 1, 0, 0, 0), "2", t0=0.5)
    assert verify_admissible(T, "2", None, "P", box=BOX).passed


def test_gbe_and_c_usual_examples():
    G = build_gbe(GBEParams(0, 1, 1, 0, 1, 0, 0))
    for t, x, u in POINTS:
        assert close(G(t, x, u), (1 / t, x / t, x - t * u))
    assert G.f_scale == -1
    assert build_c_usual(CUsualParams())(0.2, 0.3, 0.4) == (0.2, 0.3, 0.4)


def test_c2_reduces_to_c_usual():
    T = build(C2Params(c0=2, c1=0, c2=1), "x^2 + 1")
    U = build_c_usual(CUsualParams(alpha=0.5))
    for pt in POINTS:
        assert close(T(*pt), U(*pt))


# ---------------------------------------------------------------------------
# properties over every builder


@pytest.mark.parametrize("group", list(Group), ids=lambda g: g.value)
def test_derivatives_match_finite_differences(group):
    rng = np.random.default_rng(21)
    T, _ = random_transformation(group, rng)
    h = 1e-6
    checked = 0
    for t, x, w in BOX.points(n=50, seed=2, margin=0.01):
        if not T.in_domain(t, x, w):
            continue
        d = T.derivatives(t, x, w, order=2)
        assert d["T_t"] * d["X_x"] * d["W_w"] != 0
        fd = {
            "T_t": (T.T(t + h) - T.T(t - h)) / (2 * h),
            "X_t": (T.X(t + h, x) - T.X(t - h, x)) / (2 * h),
            "X_x": (T.X(t, x + h) - T.X(t, x - h)) / (2 * h),
            "W_t": (T.W(t + h, x, w) - T.W(t - h, x, w)) / (2 * h),
            "W_x": (T.W(t, x + h, w) - T.W(t, x - h, w)) / (2 * h),
            "W_w": (T.W(t, x, w + h) - T.W(t, x, w - h)) / (2 * h),
        }
        for key, value in fd.items():
            assert abs(d[key] - value) <= 1e-6 * (1 + abs(value)), key
        checked += 1
    assert checked >= 25


@pytest.mark.parametrize("group", list(Group), ids=lambda g: g.value)
def test_compose_with_inverse_is_identity(group):
    rng = np.random.default_rng(31)
    T, _ = random_transformation(group, rng)
    C = compose(T, invert(T), box=BOX)
    for t, x, w in BOX.points(n=50, seed=3, margin=1e-3):
        if T.in_domain(t, x, w):
            assert close(C(t, x, w), (t, x, w), 1e-8)


@pytest.mark.parametrize("group", list(Group), ids=lambda g: g.value)
def test_parameter_documents_round_trip(group):
    rng = np.random.default_rng(41)
    p = random_params(group, rng)
    doc = json.loads(json.dumps(p.to_dict()))
    q, extras = params_from_dict(doc)
    f = SOURCE_F[group]
    A, B = build(p, f), build(q, f)
    for pt in POINTS:
        if A.in_domain(*pt):
            assert close(A(*pt), B(*pt))


def test_unknown_parameter_fields_rejected():
    with pytest.raises(ParameterError):
        params_from_dict({"group": "gbe", "alpha": 1, "zeta": 2})
    with pytest.raises(ParameterError):
        params_from_dict({"alpha": 1})


def test_usual_pot_group_law_example():
    p1, p2 = UsualPotParams(1.5, 0.2, 0.7), UsualPotParams(0.4, -1.0, 2.0)
    law = compose_params(p1, p2)
    assert (law.alpha, law.beta, law.kappa, law.mu1, law.mu0, law.nu) == pytest.approx(
        (0.6, 0.4 * 0.2 - 1.0, 1.4, 0, 0, 0))
    C = compose(build_usual_pot(p1), build_usual_pot(p2), box=BOX)
    assert C.params == law


@pytest.mark.parametrize("group", [Group.USUAL_POT, Group.C_USUAL, Group.GBE], ids=lambda g: g.value)
def test_group_closure(group):
    rng = np.random.default_rng(51)
    A, f = random_transformation(group, rng)
    B, _ = random_transformation(group, rng)
    C = compose(A, B, box=BOX)
    assert C.params is not None and C.params.group is group
    assert verify_admissible(C, f, None, group.family, box=BOX).passed


def test_normalize_projective():
    p = normalize_projective(GBEParams(2, 0, 0, 2, 2, 0.4, 0.2))
    assert (p.alpha, p.beta, p.gamma, p.delta, p.kappa) == (1, 0, 0, 1, 1)
    assert normalize_projective(p) == p
    q = GBEParams(0.0, 1.5, -0.3, 1.1, 0.7, 0.2, 0.1)
    A, B = build_gbe(q), build_gbe(normalize_projective(q))
    for pt in POINTS:
        assert close(A(*pt), B(*pt), 1e-12)
    with pytest.raises(ParameterError):
        normalize_projective(UsualPotParams())


@pytest.mark.parametrize("s", [-3.0, 0.5, 7.0, 2.0])
def test_projective_rescaling_keeps_f_rule(s):
    rng = np.random.default_rng(61)
    for group in (Group.P3, Group.P2_LINEAR, Group.GBE):
        p = random_params(group, rng)
        A, B = build(p, SOURCE_F[group]), build(rescale_projective(p, s), SOURCE_F[group])
        assert float(A.f_scale) == pytest.approx(float(B.f_scale), rel=1e-12)


# ---------------------------------------------------------------------------
# pushforward of f


def test_pushforward_identity_and_examples():
    f = "x^2 + t + 1"
    ft = pushforward_f(identity("P"), f, BOX)
    for t, x, _ in POINTS:
        assert ft(t, x) == pytest.approx(ex.evaluate(ex.parse(f), {"t": t, "x": x}))
    U = build_usual_pot(UsualPotParams(alpha=4, kappa=2))
    ft = pushforward_f(U, f, BOX)
    for t, x, _ in POINTS:
        assert ft(4 * t, 2 * x) == pytest.approx(ex.evaluate(ex.parse(f), {"t": t, "x": x}), rel=1e-12)
    G = build_gbe(GBEParams(0, 1, 1, 0, 1, 0, 0))
    ft = pushforward_f(G, f, BOX)
    for t, x, _ in POINTS:
        assert ft(1 / t, x / t) == pytest.approx(-ex.evaluate(ex.parse(f), {"t": t, "x": x}), rel=1e-10)


@pytest.mark.parametrize("group", list(Group), ids=lambda g: g.value)
def test_generic_pushforward_agrees_with_closed_form(group):
    rng = np.random.default_rng(71)
    T, f = random_transformation(group, rng)
    generic = pushforward_f(T, f, BOX)
    closed = T.target_coefficient(f)
    for t, x, w in POINTS:
        if T.in_domain(t, x, w):
            s, y = T.point(t, x)
            assert generic(s, y) == pytest.approx(float(closed(s, y)), rel=1e-8, abs=1e-10)
