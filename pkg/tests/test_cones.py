import numpy as np
import pytest

from horizon import cones as C
from horizon import sets as S
from horizon.errors import EmptyIntersection, UnboundedProjectionRequired
from horizon.limitset import LimitSet, truncated_hausdorff

TOL = 0.05
HYPERBOLA = S.parse_set("set { h: x1*x2 = 1; }", 2)
BRANCH = S.parse_set("set { g: x1*x2 >= 1, x1 >= 0; }", 2)
EXP_EPI = S.parse_set("set { g: x2 >= exp(x1); }", 2)


def cone(*rays, dim=2):
    return LimitSet.cone(rays, dim) if rays else LimitSet.zero_cone(dim)


# analytic cones at infinity, worked out by hand from the pointwise normals
CASES = [
    ("branch", BRANCH, (1,), cone([0, -1])),
    ("branch", BRANCH, (2,), cone([-1, 0])),
    ("branch", BRANCH, (1, 2), cone([0, -1], [-1, 0])),
    ("hyperbola", HYPERBOLA, (1,), cone([0, -1], [0, 1])),
    ("hyperbola", HYPERBOLA, (2,), cone([-1, 0], [1, 0])),
    ("exp", EXP_EPI, (1,), cone([0, -1], [1, 0])),
    ("exp", EXP_EPI, (2,), cone([1, 0])),
    ("lower halfplane", S.parse_set("x2 <= 0", 2), (1,), cone([0, 1])),
    ("lower halfplane", S.parse_set("x2 <= 0", 2), (2,), cone()),
    ("quadrant", S.parse_set("x1 >= 0 & x2 >= 0", 2), (1, 2), cone([-1, 0], [0, -1])),
    ("plane", S.parse_set("R^2", 2), (1, 2), cone()),
]


@pytest.mark.parametrize("name,Omega,I,expected", CASES, ids=[f"{c[0]}-{c[2]}" for c in CASES])
def test_projection_route_matches_analytic_cone(name, Omega, I, expected):
    assert truncated_hausdorff(C.normal_cone_at_infinity(Omega, I), expected) <= TOL


@pytest.mark.parametrize("Omega,I", [(BRANCH, (1, 2)), (EXP_EPI, (1,)), (EXP_EPI, (2,))])
def test_pointwise_route_agrees_with_projection_route(Omega, I):
    a = C.normal_cone_at_infinity(Omega, I, route="projection")
    b = C.normal_cone_at_infinity(Omega, I, route="pointwise")
    assert truncated_hausdorff(a, b) <= TOL


def test_index_set_validation():
    assert C.index_set((1, 2), 2) == (0, 1)
    with pytest.raises(ValueError):
        C.index_set((3,), 2)


def test_boundary_escape():
    assert C.boundary_escape(HYPERBOLA, [1]).holds
    assert C.boundary_escape(S.whole_space(2), [1]).fails
    with pytest.raises(UnboundedProjectionRequired):
        C.boundary_escape(S.ball([0, 0], 1), [1])


def test_intersection_rule():
    c = C.check_intersection_rule(S.parse_set("x2 >= 0", 2), S.parse_set("x1 >= 0", 2), [1, 2])
    assert c.holds
    bad = C.check_intersection_rule(HYPERBOLA, HYPERBOLA, [1, 2])
    assert bad.fails and np.linalg.norm(bad.witnesses[0]) == pytest.approx(1.0)
    with pytest.raises(EmptyIntersection):
        C.check_intersection_rule(EXP_EPI, S.parse_set("set { g: x2 <= -exp(x1); }", 2), [1, 2])


def test_product_rule_equality_for_lines():
    R = S.whole_space(1)
    prod, direct, cert = C.product_cone(R, [1], R, [1])
    assert cert.holds and cert.note == "equality"
    assert prod.is_zero() and direct.is_zero()
