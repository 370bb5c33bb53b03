import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from horizon import expr as E
from horizon import sets as S
from horizon.errors import DSLSyntaxError, NotInSet
from horizon.limitset import truncated_hausdorff

pt = st.tuples(st.floats(-5, 5), st.floats(-5, 5)).map(np.array)

HYPERBOLA = S.parse_set("set { h: x1*x2 = 1; }", 2)
EXP_EPI = S.parse_set("set { g: x2 >= exp(x1); }", 2)

_s = np.geomspace(1e-3, 1e3, 400_001)
HYPERBOLA_TREE = cKDTree(np.vstack([np.c_[_s, 1 / _s], np.c_[-_s, -1 / _s]]))
_t = np.linspace(-25, 3, 600_001)
EXP_TREE = cKDTree(np.c_[_t, np.exp(_t)])


# ---------------------------------------------------------------------------
# parsing and membership
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("text,dim,kind", [
    ("set { h: x1*x2 = 1; }", 2, "constraints"),
    ("x1 >= 0 & x2 >= 0", 2, "polyhedron"),
    ("halfspace(1,1; 2)", 2, "halfspace"),
    ("ball(0,0; 1)", 2, "ball"),
    ("R^2", 2, "whole"),
    ("whole", 3, "whole"),
])
def test_parse_set_kinds(text, dim, kind):
    assert S.parse_set(text, dim).kind == kind


@pytest.mark.parametrize("text", ["set { q: x1 }", "set { g x1 }", "x1 >= 0 &"])
def test_parse_set_rejects(text):
    with pytest.raises(DSLSyntaxError):
        S.parse_set(text, 2)


def test_membership_and_flags():
    assert S.parse_set("halfspace(1,1; 2)", 2).contains([1, 1])
    epi = S.epigraph(E.parse_function("abs(x1)", 1))
    assert epi.contains([0, 1]) and not epi.contains([2, 1])
    assert EXP_EPI.is_convex() and EXP_EPI.is_bounded() is None  # unknown for nonlinear constraints
    assert S.ball([0, 0], 1).is_bounded() is True
    P = S.product(S.parse_set("x1 >= 0", 1), S.parse_set("x1 >= 0", 1))
    assert P.dim == 2 and P.contains([1, 2]) and not P.contains([-1, 2])


# ---------------------------------------------------------------------------
# projection against independent oracles
# ---------------------------------------------------------------------------

def test_projection_onto_hyperbola_matches_dense_curve():
    X = np.random.default_rng(0).normal(size=(400, 2)) * 5
    Y, d = S.project_batch(HYPERBOLA, X)
    ref = HYPERBOLA_TREE.query(X)[0]
    assert np.abs(d - ref).max() < 1e-4
    assert np.abs(Y[:, 0] * Y[:, 1] - 1).max() < 1e-6


@given(x=pt)
def test_projection_onto_exp_epigraph(x):
    Y, d = S.project_batch(EXP_EPI, x[None, :])
    ref = 0.0 if x[1] >= np.exp(x[0]) else EXP_TREE.query(x)[0]
    assert d[0] == pytest.approx(ref, abs=1e-4)
    assert EXP_EPI.contains(Y[0], tol=1e-7)


@given(x=pt)
def test_projection_onto_quadrant_is_clipping(x):
    Q = S.parse_set("x1 >= 0 & x2 >= 0", 2)
    (y,) = S.project(Q, x)
    assert np.allclose(y, np.maximum(x, 0), atol=1e-9)


@given(x=pt)
def test_projection_onto_halfspace_and_ball(x):
    a = np.array([1.0, 2.0])
    (y,) = S.project(S.halfspace(a, 1.0), x)
    assert np.allclose(y, x - max(0.0, a @ x - 1.0) / (a @ a) * a, atol=1e-9)
    (z,) = S.project(S.ball([1.0, -1.0], 2.0), x)
    c = np.array([1.0, -1.0])
    r = np.linalg.norm(x - c)
    assert np.allclose(z, x if r <= 2 else c + 2 * (x - c) / r, atol=1e-9)


def test_projection_is_set_valued_at_symmetric_points():
    Y = S.project(HYPERBOLA, [0.0, 0.0])
    assert sorted(map(tuple, np.round(Y, 6))) == [(-1.0, -1.0), (1.0, 1.0)]


# ---------------------------------------------------------------------------
# pointwise normal cones
# ---------------------------------------------------------------------------

def test_normal_cone_on_hyperbola_is_a_line():
    x = np.array([2.0, 0.5])
    N = S.normal_cone_at(HYPERBOLA, x)
    n = np.array([0.5, 2.0]) / np.linalg.norm([0.5, 2.0])  # gradient of x1*x2
    assert N.contains(n) and N.contains(-n)
    assert truncated_hausdorff(N, S.sampled_normal_cone(HYPERBOLA, x)) < 0.05


def test_normal_cone_at_quadrant_corner():
    N = S.normal_cone_at(S.parse_set("x1 >= 0 & x2 >= 0", 2), [0.0, 0.0])
    assert N.contains([-1, -3]) and not N.contains([1, 0])


def test_normal_cone_outside_set_raises():
    with pytest.raises(NotInSet):
        S.normal_cone_at(HYPERBOLA, [1.0, 2.0])
