import math

import numpy as np
import pytest

from helpers import BOX
from pburg import expr as ex
from pburg.classes import Family, residual_values
from pburg.groupoid import pushforward_jet
from pburg.maps import (delinearization, heat_residual, linearization, linearize_p3, potentialize_C, potentialize_L,
                        triangle_check, triangle_discrepancy)
from pburg.report import JetSampler
from pburg.transforms import P2Params, P3Params, build, compose


@pytest.mark.parametrize("f", ["-1", "t*x + 1", "exp(x)*t + 2"])
def test_c_potentialization_identity(f):
    report = potentialize_C(f, BOX, n=100).reports["identity"]
    assert report.n == 100 and report.max_residual < 1e-9


def test_c_potentialization_wrong_identification_fails():
    report = potentialize_C("-1", BOX, n=100, scale=2.0).reports["identity"]
    assert report.max_residual > 1e-3 and not report.passed


def test_l_potentialization_time_only():
    link = potentialize_L("1 + t^2", BOX, n=100)
    assert link.passed
    assert link.lam(0.7) == 1.0
    assert link.hat(0.4, 0.9, 0.3) == pytest.approx((0.2, 0.9, 0.3))
    assert link.target_f(0.4, 0.9) == pytest.approx(2 * 1.16)


def test_l_potentialization_x_squared():
    link = potentialize_L("x^2", BOX, n=100)
    assert link.lam(1.0) == pytest.approx(math.exp(2), rel=1e-14)
    assert link.reports["hat"].max_residual < 1e-6 and link.passed


def test_l_potentialization_linear():
    link = potentialize_L("x", BOX, n=100)
    assert link.passed
    s, y, _ = link.hat(0.4, 0.9, 0.1)
    assert (s, y) == pytest.approx((0.2, 1.3))
    # f^ = 2x = 2 (x^ - 2 t^)
    assert link.target_f(0.4, 0.9) == pytest.approx(2 * (y - 2 * s))


def test_lambda_agrees_with_p2_builder():
    f = "t*x^2 + x + 1"
    link = potentialize_L(f, BOX, t0=0.2)
    T = build(P2Params(1, 0.5, 1), f, t0=0.2)
    for t in np.linspace(0.1, 1.0, 10):
        assert link.lam(t) == pytest.approx(T.core.lam(t), rel=1e-10)


def test_l_potentialization_rejects_non_quadratic():
    with pytest.raises(Exception):
        potentialize_L("exp(x)", BOX)


def test_linearization_examples():
    T = linearization(-1.0)
    assert T(0.3, 0.5, 0.0)[2] == 1.0
    _, reports = linearize_p3(1.0, BOX, n=100)
    assert reports["identity"].max_residual < 1e-9
    assert reports["inverse"].passed
    assert delinearization(2.0)(0.1, 0.2, math.e)[2] == pytest.approx(2.0)


def test_linearization_after_p3_map_lands_in_heat_solutions():
    P = build(P3Params(1.1, 0.2, 0.3, 1.4, 0.9, 0.2, -0.1, 1.2, {"kind": "quadratic", "scale": 0.5}), "-1")
    g = float(P.f_scale) * -1.0
    C = compose(P, linearization(g), box=BOX)
    for jet in JetSampler(BOX, 50, 4).draw(2, accept=C.in_domain):
        jet = jet.replace(w_t=-residual_values(Family.P, jet.w, 0.0, jet.w_x, jet.w_xx, -1.0))
        out = pushforward_jet(C, jet)
        assert abs(heat_residual(g, out)) < 1e-8 * (1 + out.magnitude())


def test_triangle_commutes():
    report = triangle_check((1.3, 0.2, -0.7, 0.5, 0.3), BOX, n=50)
    assert report.max_residual < 1e-8
    jets = JetSampler(BOX, 10, 1).draw(3)
    assert triangle_discrepancy((0.4, -0.1, 2.0, 0.0, 1.0), jets) < 1e-8
