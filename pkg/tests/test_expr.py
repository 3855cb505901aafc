import math
from fractions import Fraction

import pytest
from hypothesis import assume, given, settings, strategies as st

from pburg import expr as ex
from pburg.errors import DomainError, IndeterminateError, ParseError, UnboundVariableError

t, x, v = ex.Var("t"), ex.Var("x"), ex.Var("v")
BOX = ex.SampleBox.of(t=(0.1, 1.0), x=(0.5, 1.5))


# ---------------------------------------------------------------------------
# parser and printer


def test_parse_examples():
    assert ex.parse("t*x^2 + 1") == ex.Add(ex.Mul(t, ex.Pow(x, ex.Const(2))), ex.Const(1))
    assert ex.parse("-1") == ex.Const(-1)
    assert ex.parse("exp(2*t)*x") == ex.Mul(ex.Func("exp", ex.Mul(ex.Const(2), t)), x)


def test_precedence_and_associativity():
    assert ex.evaluate(ex.parse("2^3^2"), {}) == 512
    assert ex.evaluate(ex.parse("-2^2"), {}) == -4
    assert ex.evaluate(ex.parse("8/4/2"), {}) == 1
    assert ex.evaluate(ex.parse("1 - 2 - 3"), {}) == -4


def test_rational_literals_stay_exact():
    c = ex.parse("3/4")
    assert isinstance(c, ex.Const) and c.value == Fraction(3, 4)
    assert ex.parse("0.25").value == 0.25
    assert ex.parse("x^(1/2)") == ex.Pow(x, ex.Const(Fraction(1, 2)))


@pytest.mark.parametrize("text, offset", [("x+(", 3), ("t**2", 2), ("", 0), ("2*", 2), ("(x", 2)])
def test_syntax_errors_report_offsets(text, offset):
    with pytest.raises(ParseError) as info:
        ex.parse(text)
    assert info.value.offset == offset


@pytest.mark.parametrize("text", ["y + 1", "sin(x)", "w*t", "exp"])
def test_unknown_identifiers_rejected(text):
    with pytest.raises(ParseError):
        ex.parse(text)


# ---------------------------------------------------------------------------
# differentiation, evaluation, simplification


def _same_poly(a, b):
    return ex.to_poly(a).terms == ex.to_poly(b).terms


def test_derivative_examples():
    assert _same_poly(ex.differentiate(ex.parse("t*x^2+1"), "x"), ex.parse("2*t*x"))
    assert ex.simplify(ex.derivative(ex.parse("x^3"), "x", "x", "x")) == ex.Const(6)
    d = ex.differentiate(ex.parse("exp(2*t)"), "t")
    assert ex.evaluate(d, {"t": 0.3}) == pytest.approx(2 * math.exp(0.6), rel=1e-15)


def test_ln_abs_derivative_is_reciprocal():
    d = ex.differentiate(ex.parse("ln(abs(x))"), "x")
    for xv in (-2.0, -0.3, 0.7, 5.0):
        assert ex.evaluate(d, {"x": xv}) == pytest.approx(1 / xv)


def test_evaluate_examples():
    assert ex.evaluate(ex.parse("t*x^2+1"), {"t": 2, "x": 3}) == 19
    assert ex.evaluate(ex.parse("ln(x)"), {"x": 1}) == 0
    with pytest.raises(DomainError) as info:
        ex.evaluate(ex.parse("1/x"), {"x": 0})
    assert "x" in str(info.value)
    with pytest.raises(DomainError):
        ex.evaluate(ex.parse("sqrt(x - 2)"), {"x": 1})
    with pytest.raises(UnboundVariableError):
        ex.evaluate(ex.parse("t + x"), {"t": 1})


def test_simplify_examples():
    assert ex.simplify(ex.parse("x + 0*t")) == x
    assert ex.simplify(ex.parse("(t+1)*x - t*x")) == x
    e = ex.parse("exp(ln(x))")
    assert ex.simplify(e) == e


def test_zero_and_constant_tests():
    assert ex.probably_zero(ex.sub(ex.derivative(ex.parse("x^3"), "x", "x", "x"), ex.Const(6)), BOX)
    box01 = ex.SampleBox.of(x=(0.0, 1.0))
    assert not ex.probably_zero(ex.derivative(ex.parse("exp(x)"), "x", "x", "x"), box01)
    assert ex.probably_zero(ex.parse("(t+1)*x - t*x - x"), BOX)
    assert ex.as_constant(ex.parse("-1"), ("t", "x"), BOX) == -1
    assert ex.as_constant(ex.parse("t*x"), ("t", "x"), BOX) is None
    assert ex.as_constant(ex.parse("x - x + 5"), ("t", "x"), BOX) == 5


def test_probably_zero_indeterminate_when_mostly_undefined():
    box = ex.SampleBox.of(x=(-1.0, -0.5))
    with pytest.raises(IndeterminateError):
        ex.probably_zero(ex.parse("ln(x) - ln(x)") + ex.parse("sqrt(x)"), box)


def test_poly_in_collects_coefficients():
    coeffs = ex.poly_in(ex.parse("t*x^2 + 3*x - x*t + exp(t)"), "x")
    assert set(coeffs) == {0, 1, 2}
    assert ex.evaluate(coeffs[1], {"t": 0.5}) == pytest.approx(2.5)


def test_sample_box_is_deterministic():
    assert BOX.points(n=10, seed=4) == BOX.points(n=10, seed=4)
    assert BOX.points(n=10, seed=4) != BOX.points(n=10, seed=5)
    for tv, xv, _ in BOX.points(n=30, margin=0.1):
        assert 0.19 <= tv <= 0.91 and 0.6 <= xv <= 1.4


# ---------------------------------------------------------------------------
# properties

_leaf = st.one_of(st.sampled_from([t, x]),
                  st.integers(0, 9).map(ex.Const),
                  st.fractions(min_value=0, max_value=5, max_denominator=7).map(ex.Const))


def _extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda p: ex.Add(*p)),
        st.tuples(children, children).map(lambda p: ex.Mul(*p)),
        st.tuples(children, children).map(lambda p: ex.Div(*p)),
        st.tuples(children, st.integers(1, 3)).map(lambda p: ex.Pow(p[0], ex.Const(p[1]))),
        children.map(ex.Neg),
        st.tuples(st.sampled_from(ex.FUNCTIONS), children).map(lambda p: ex.Func(*p)),
    )


raw_trees = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(raw_trees)
def test_print_parse_round_trip(e):
    assert ex.parse(ex.to_string(e)) == e


# smooth trees: every quotient and log is guarded away from its singularity
def _smooth_extend(children):
    return st.one_of(
        st.tuples(children, children).map(lambda p: ex.add(*p)),
        st.tuples(children, children).map(lambda p: ex.sub(*p)),
        st.tuples(children, children).map(lambda p: ex.mul(*p)),
        st.tuples(children, children).map(lambda p: ex.div(p[0], ex.add(ex.Const(1), ex.power(p[1], 2)))),
        st.tuples(children, st.integers(1, 3)).map(lambda p: ex.power(*p)),
        children.map(lambda c: ex.func("exp", ex.div(c, ex.Const(4)))),
        children.map(lambda c: ex.func("sqrt", ex.add(ex.Const(1), ex.power(c, 2)))),
        children.map(lambda c: ex.func("ln", ex.add(ex.Const(2), ex.power(c, 2)))),
    )


_smooth_leaf = st.one_of(st.sampled_from([t, x]), st.integers(-3, 3).map(ex.Const))
smooth_trees = st.recursive(_smooth_leaf, _smooth_extend, max_leaves=10)
points = st.tuples(st.floats(0.2, 1.0), st.floats(0.5, 1.5))


@settings(max_examples=200, deadline=None)
@given(smooth_trees, st.sampled_from(["t", "x"]), points)
def test_derivative_matches_central_difference(e, var, pt):
    fn = ex.compile_expr(e)
    d = ex.compile_expr(ex.differentiate(e, var))
    tv, xv = pt
    value = d(tv, xv, 0.0)
    assume(math.isfinite(value) and abs(value) < 1e6)
    h = 1e-5
    if var == "t":
        fd = (fn(tv + h, xv, 0.0) - fn(tv - h, xv, 0.0)) / (2 * h)
    else:
        fd = (fn(tv, xv + h, 0.0) - fn(tv, xv - h, 0.0)) / (2 * h)
    assert abs(value - fd) <= 1e-5 * (1 + abs(value))


@settings(max_examples=150, deadline=None)
@given(smooth_trees)
def test_simplify_preserves_values(e):
    s = ex.simplify(e)
    assert ex.size(s) <= ex.size(e)
    f, g = ex.compile_expr(e), ex.compile_expr(s)
    for tv, xv, _ in BOX.points(n=50, seed=1):
        a, b = f(tv, xv, 0.0), g(tv, xv, 0.0)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@settings(max_examples=150, deadline=None)
@given(smooth_trees)
def test_probably_zero_is_never_fooled_by_large_values(e):
    fn = ex.compile_expr(e)
    if ex.probably_zero(e, BOX):
        for tv, xv, _ in BOX.points():
            assert abs(fn(tv, xv, 0.0)) <= 1e-6


@settings(max_examples=100, deadline=None)
@given(smooth_trees, points)
def test_compiled_matches_evaluate(e, pt):
    tv, xv = pt
    assert ex.compile_expr(e)(tv, xv, 0.0) == ex.evaluate(e, {"t": tv, "x": xv})
