import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon import expr as E
from horizon.errors import DSLSyntaxError, NotDifferentiable, SemanticError

pf = E.parse_function

coef = st.floats(-3, 3, allow_nan=False).map(lambda v: round(v, 2))
point2 = st.tuples(st.floats(-4, 4), st.floats(-4, 4)).map(np.array)


# ---------------------------------------------------------------------------
# parsing and evaluation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("text,dim,x,expected", [
    ("x1^3+x2", 2, [2.0, 1.0], 9.0),
    ("abs(x1) - 2*x2", 2, [-1.5, 0.25], 1.0),
    ("max(x1, 2*x1)", 1, [-3.0], -3.0),
    ("min(x1, 2*x1)", 1, [-3.0], -6.0),
    ("norm(x1, x2)", 2, [3.0, -4.0], 5.0),
    ("sqrt(abs(x1)+abs(x2))", 2, [-3.0, 1.0], 2.0),
    ("exp(x1) / (1 + x2^2)", 2, [0.0, 1.0], 0.5),
    ("-x1^2", 1, [3.0], -9.0),
    ("piecewise(x1 > 0 : 1; x1 <= 0 : 0)", 1, [0.0], 0.0),
])
def test_evaluate_matches_hand_values(text, dim, x, expected):
    assert E.evaluate(pf(text, dim), x) == pytest.approx(expected)


def test_indicator_is_infinite_outside():
    f = pf("indicator(x1 >= 0)", 1)
    assert E.evaluate(f, [1.0]) == 0.0
    assert E.evaluate(f, [-1.0]) == np.inf


def test_overflow_saturates_instead_of_inf():
    assert E.evaluate(pf("exp(x1)", 1), [1e4]) == E.FLOAT_MAX


@pytest.mark.parametrize("text,err", [
    ("x1 +", DSLSyntaxError),
    ("2^x1", DSLSyntaxError),
    ("x1 ^ 2.5", DSLSyntaxError),
    ("x0", DSLSyntaxError),
    ("x3", SemanticError),
    ("foo(x1)", DSLSyntaxError),
    ("piecewise(x1*x1 > 0 : 1)", SemanticError),
    ("piecewise(x1 > 0 : 1)", SemanticError),
    ("log(x1)", SemanticError),
])
def test_rejected_inputs(text, err):
    with pytest.raises(err):
        pf(text, 2)


@pytest.mark.parametrize("text,dim,tags", [
    ("abs(x1)", 1, {E.CONVEX, E.PIECEWISE_LINEAR}),
    ("exp(x1)", 1, {E.CONVEX, E.SMOOTH}),
    ("x1^3+x2", 2, {E.SMOOTH}),
    ("max(x1, 2*x1)", 1, {E.CONVEX, E.PIECEWISE_LINEAR}),
    ("indicator(x1 >= 0)", 1, {E.CONVEX, E.EXTENDED_VALUED}),
    ("norm(x1, x2)", 2, {E.CONVEX, E.PIECEWISE_SMOOTH}),
    ("piecewise(x1 > 0 : -log(x1); x1 <= 0 : 0)", 1, {E.EXTENDED_VALUED, E.PIECEWISE_SMOOTH}),
])
def test_class_tags(text, dim, tags):
    assert set(pf(text, dim).class_tags) == tags


def test_affine_form_and_curvature():
    c, d = E.affine_form(pf("2*x1 - 3*x2 + 1", 2).root, 2)
    assert np.allclose(c, [2, -3]) and d == 1.0
    assert E.affine_form(pf("x1*x2", 2).root, 2) is None
    assert E.curvature(pf("max(x1^2, -x1)", 1).root) == "convex"
    assert E.curvature(pf("-abs(x1)", 1).root) == "concave"


def test_combinators():
    f = pf("abs(x1) + x2", 2)
    g = E.compose(f, [pf("x1 + x2", 2), pf("x1 - x2", 2)])
    assert E.evaluate(g, [1.0, 2.0]) == pytest.approx(2.0)
    assert E.evaluate(E.embed(pf("x1^2", 1), 3, 1), [5.0, 2.0, 7.0]) == 4.0
    t = E.tilt(pf("x1^2", 1), [2.0])
    assert E.evaluate(t, [3.0]) == pytest.approx(3.0)
    assert E.evaluate(E.fmax(pf("x1", 1), pf("-x1", 1)), [-2.0]) == 2.0
    assert E.evaluate(E.scale(pf("x1", 1), 3.0), [2.0]) == 6.0


def test_gradient_exact_and_kink():
    assert np.allclose(E.gradient_exact(pf("x1^3+x2", 2), [2.0, 1.0]), [12.0, 1.0])
    with pytest.raises(NotDifferentiable):
        E.gradient_exact(pf("abs(x1)", 1), [0.0])


def test_overflowed_gradient_has_no_nan():
    # exp saturates at large x1; the zero partial in x2 must stay exactly zero
    v, G, dom, kink = E.grad_batch(pf("exp(x1) + x2^2", 2), [[2048.0, 1.0]])
    assert not np.isnan(G).any()
    assert G[0, 1] == 2.0


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

@given(a=coef, b=coef, c=coef, x=point2)
def test_gradient_matches_central_differences(a, b, c, x):
    f = pf(f"{a}*x1^3 + {b}*exp(x2/4) + {c}*x1*x2 + sqrt(1 + x1^2)", 2)
    g = E.gradient_exact(f, x)
    h = 1e-6
    fd = np.array([(E.evaluate(f, x + h * e) - E.evaluate(f, x - h * e)) / (2 * h) for e in np.eye(2)])
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-5)


@given(a=coef, b=coef, x=point2)
def test_text_round_trip_preserves_values(a, b, x):
    f = pf(f"max({a}*x1, {b}*x2) + abs(x1 - {b}) - norm(x1, x2)", 2)
    g = pf(E.to_text(f), 2)
    assert E.evaluate(g, x) == pytest.approx(E.evaluate(f, x), abs=1e-12)


@given(a=coef, b=coef)
def test_batch_matches_pointwise(a, b):
    f = pf(f"{a}*abs(x1) + {b}*x2^2 - min(x1, x2)", 2)
    X = np.random.default_rng(0).normal(size=(20, 2)) * 3
    assert np.allclose(E.eval_batch(f, X), [E.evaluate(f, x) for x in X])
