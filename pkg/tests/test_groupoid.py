import numpy as np
import pytest

from helpers import BOX, random_params, random_transformation
from pburg import expr as ex
from pburg.classes import Family, Jet2, Subclass
from pburg.errors import DomainStarvationError, VerificationError
from pburg.groupoid import (admissible, check_classifying_equations, check_subclass_preserved, classify_at_points,
                            decide_equivalence, pushforward_jet, pushforward_jet3, verify_admissible)
from pburg.transforms import (GBEParams, Group, P3Params, PointTransformation, UsualPotParams, build,
                              build_c_usual, build_usual_pot, compose, identity, normalize_projective)

JET = Jet2(0.4, 0.9, 0.3, -0.2, 0.7, 1.1, w_tx=0.5, w_xxx=-0.8)


def test_identity_leaves_jets_alone():
    out = pushforward_jet(identity("P"), JET)
    assert out.entries()[:6] == JET.entries()[:6]


def test_scaling_jet_formulas():
    a, k = 2.0, 3.0
    T = build_usual_pot(UsualPotParams(alpha=a, kappa=k))
    out = pushforward_jet(T, JET)
    assert out.w_x == pytest.approx(k / a * JET.w_x)
    assert out.w_xx == pytest.approx(JET.w_xx / a)
    assert out.w_t == pytest.approx(k * k / (a * a) * JET.w_t)


def test_galilean_shift_adds_one_to_slope():
    T = build_usual_pot(UsualPotParams(mu1=2))
    assert pushforward_jet(T, JET).w_x == pytest.approx(JET.w_x + 1)


@pytest.mark.parametrize("group", [Group.USUAL_POT, Group.P3, Group.GBE, Group.P2], ids=lambda g: g.value)
def test_third_order_pushforward_extends_second_order(group):
    T, _ = random_transformation(group, np.random.default_rng(5))
    j2, j3 = pushforward_jet(T, JET), pushforward_jet3(T, JET)
    assert np.allclose(j3.entries()[:6], j2.entries(), rtol=1e-12, atol=1e-12)
    assert j3.w_tx is not None and j3.w_xxx is not None


def test_third_order_pushforward_against_finite_differences():
    # push a concrete solution-free field v(t, x) through T and compare with FD of the image
    T = build(P3Params(1.0, 0.5, 0.3, 1.2, 0.8, 0.4, -0.2, 1.5, {"kind": "quadratic"}), "-1")

    def v(t, x):
        return 0.3 + 0.2 * t + 0.7 * x + 0.4 * t * x - 0.1 * x ** 3

    def image(t, x):
        return T(t, x, v(t, x))

    t, x = 0.5, 0.8
    jet = Jet2(t, x, v(t, x), 0.2 + 0.4 * x, 0.7 + 0.4 * t - 0.3 * x * x, -0.6 * x, w_tx=0.4, w_xxx=-0.6)
    out = pushforward_jet3(T, jet)
    # tilded derivatives along x at fixed t~: move x and re-solve nothing, since t~ depends on t only
    h = 1e-3
    xs = [x + k * h for k in (-2, -1, 0, 1, 2)]
    pts = [image(t, xx) for xx in xs]
    ys = np.array([p[1] for p in pts])
    zs = np.array([p[2] for p in pts])
    coeffs = np.polyfit(ys - ys[2], zs, 4)
    assert coeffs[-2] == pytest.approx(out.w_x, rel=1e-6)
    assert 2 * coeffs[-3] == pytest.approx(out.w_xx, rel=1e-5)
    assert 6 * coeffs[-4] == pytest.approx(out.w_xxx, rel=1e-3)


def test_identity_is_admissible_exactly():
    r = verify_admissible(identity("P"), "x^2 + t", "x^2 + t", "P", box=BOX)
    assert r.passed and r.max_residual < 1e-13


def test_corrupted_target_fails():
    U = build_usual_pot(UsualPotParams(1.3, 0.2, -0.7, 0.5, 0.3, 0.1))
    good = U.target_coefficient("x^2 + t")
    r = verify_admissible(U, "x^2 + t", lambda s, y: good(s, y) + 0.1, "P", box=BOX)
    assert not r.passed and r.max_residual > 1e-3
    with pytest.raises(VerificationError):
        admissible(U, "x^2 + t", lambda s, y: good(s, y) + 0.1, "P", box=BOX)


def test_report_shape_and_worst_offender():
    r = verify_admissible(identity("P"), "x^2 + t", "x^2 + 2*t", "P", box=BOX, n=50)
    d = r.to_dict()
    assert set(d) == {"n", "max_residual", "mean_residual", "tolerance", "verdict"}
    assert d["verdict"] == "fail" and r.worst["value"] == r.max_residual
    assert set(r.worst["point"]) >= {"t", "x", "w", "w_t", "w_x", "w_xx"}


def test_domain_starvation():
    # an exclusion that vanishes on 90% of the box leaves too few admissible jets
    T = PointTransformation(lambda t: t, lambda t, x: x, lambda t, x, v: v, Family.P,
                            exclusions=[("t > 0.9", lambda t, x, v: 0.0 if t < 0.91 else 1.0)])
    with pytest.raises(DomainStarvationError):
        verify_admissible(T, "1", "1", "P", box=BOX, n=50)


def test_classifying_equations_examples():
    rng = np.random.default_rng(8)
    for _ in range(3):
        T = build_usual_pot(random_params(Group.USUAL_POT, rng))
        r = check_classifying_equations(T, "x^3 + 1", T.target_coefficient("x^3 + 1"), box=BOX)
        assert r.max_residual < 1e-8
    P3 = build(P3Params(1.0, 0.5, 0.3, 1.2, 0.8, 0.4, -0.2, 1.5, {"kind": "exponential", "a": 0.5}), "2")
    assert check_classifying_equations(P3, "2", box=BOX).passed
    square = PointTransformation(lambda t: t, lambda t, x: x, lambda t, x, v: v * v + v, Family.P,
                                 exclusions=[("2v+1", lambda t, x, v: 2 * v + 1)])
    assert not check_classifying_equations(square, "x^2 + t", box=BOX).passed


def test_classify_at_points():
    pts = [(t, x) for t, x, _ in BOX.points(n=10)]
    assert classify_at_points("P", lambda t, x: 2.0 + 0 * x, pts) is Subclass.P3
    assert classify_at_points("P", lambda t, x: t * x + 1, pts) is Subclass.P2
    assert classify_at_points("P", lambda t, x: x * x * x + 1, pts) is Subclass.P1
    assert classify_at_points("C", lambda t, x: x * x + t, pts) is Subclass.C2


def test_subclass_preservation_examples():
    rng = np.random.default_rng(9)
    for _ in range(5):
        C = build_c_usual(random_params(Group.C_USUAL, rng))
        assert check_subclass_preserved(C, "x^3 + 1", family="C", box=BOX)
    # no usual-pot transformation maps exp(x) to a constant
    for i in range(100):
        T = build_usual_pot(random_params(Group.USUAL_POT, rng))
        assert not verify_admissible(T, "exp(x)", "-1", "P", box=BOX, n=20, seed=i).passed


def test_pass_is_stable_under_identity_and_renormalization():
    p = GBEParams(0.8, 0.3, -0.2, 1.4, 1.1, 0.5, -0.3)
    G = build(p, None)
    f = "x^2 + t + 1"
    assert verify_admissible(G, f, None, "L", box=BOX).passed
    assert verify_admissible(compose(identity("L"), G, box=BOX), f, None, "L", box=BOX).passed
    assert verify_admissible(build(normalize_projective(p), None), f, G.target_coefficient(f), "L", box=BOX).passed


def test_groupoid_closure_on_builder_chains():
    P1 = build(P3Params(1.2, 0.1, 0.2, 1.3, 0.9, 0.3, 0.1, 1.4, {"kind": "linear", "scale": 0.2}), "-1")
    f2 = float(P1.f_scale) * -1.0
    P2 = build(P3Params(0.7, -0.2, -0.1, 1.1, 1.2, -0.4, 0.2, 0.6), repr(f2))
    C = compose(P1, P2, box=BOX)
    f3 = float(P2.f_scale) * f2
    assert verify_admissible(C, "-1", repr(f3), "P", box=BOX).passed
    U1 = build_usual_pot(UsualPotParams(1.3, 0.2, -0.7, 0.5, 0.3, 0.1))
    U2 = build_usual_pot(UsualPotParams(0.6, -0.3, 1.2, -0.4, 0.8, 0.25))
    assert verify_admissible(compose(U1, U2, box=BOX), "x^3 + t + 1", None, "P", box=BOX).passed


# ---------------------------------------------------------------------------
# equivalence


def test_constant_pair_is_equivalent_with_witness():
    v = decide_equivalence("-1", "5", "P", box=BOX)
    assert v.verdict == "equivalent"
    p = v.witness.transformation.params
    assert p.alpha == pytest.approx(-0.2) and p.gamma == 0 and p.kappa == 1
    assert verify_admissible(v.witness.transformation, "-1", "5", "P", box=BOX, seed=4).passed


def test_subclass_mismatch_is_inequivalent():
    v = decide_equivalence("exp(x)", "-1", "P", box=BOX)
    assert v.verdict == "inequivalent" and v.witness is None
    assert [s.value for s in v.subclasses] == ["P1", "P3"]


def test_cubic_pair_found_by_search():
    v = decide_equivalence("x^3", "8*x^3", "P", box=BOX)
    assert v.verdict == "equivalent"
    assert verify_admissible(v.witness.transformation, "x^3", "8*x^3", "P", box=BOX, seed=2).passed


def test_c_and_l_searches():
    v = decide_equivalence("x^3 + 1", "2*x^3 + 1", "C", box=BOX)
    assert v.verdict in ("equivalent", "undecided")
    if v.verdict == "equivalent":
        assert v.witness.report.passed
    v = decide_equivalence("x^2 + 1", "x^2 + 1", "L", box=BOX)
    assert v.verdict == "equivalent" and v.witness.report.passed


def test_p2_pairs_need_a_candidate():
    f1 = "t*x + 1"
    v = decide_equivalence(f1, "t*x + 2", "P", box=BOX)
    assert v.verdict == "undecided" and v.witness is None
    T = build_usual_pot(UsualPotParams(kappa=2, alpha=4))
    f2 = ex.to_string(T.target_expr(ex.parse(f1)))
    v = decide_equivalence(f1, f2, "P", box=BOX, candidate=T)
    assert v.verdict == "equivalent"
    bad = decide_equivalence(f1, "t*x + 2", "P", box=BOX, candidate=T)
    assert bad.verdict == "undecided"


def test_equivalence_never_claims_without_witness():
    for f1, f2 in [("x^3 + t", "exp(x)"), ("exp(x) + 1", "exp(2*x) + 1"), ("x^4 + 1", "x^4 + 2")]:
        v = decide_equivalence(f1, f2, "P", box=BOX, budget=8)
        assert v.verdict in ("equivalent", "undecided")
        if v.verdict == "equivalent":
            assert verify_admissible(v.witness.transformation, f1, f2, "P", box=BOX, seed=7).passed
