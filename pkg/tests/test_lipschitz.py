import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon import expr as E
from horizon import lipschitz as L
from horizon import sets as S
from horizon.errors import NotPiecewiseLinear
from horizon.infinity import estimate_at_infinity
from horizon.limitset import LimitSet, convex_hull, truncated_hausdorff

pf = E.parse_function

# (function, dim, expected verdict, expected L or None)
BATTERY = [
    ("abs(x1)", 1, "Holds", 1.0),
    ("sqrt(abs(x1) + abs(x2))", 2, "Holds", None),
    ("max(x1, 2*x1)", 1, "Holds", 2.0),
    ("exp(x1)", 1, "Fails", None),
    ("x1^3", 1, "Fails", None),
    ("2*x1 + 3", 1, "Holds", 2.0),
]


@pytest.mark.parametrize("text,dim,verdict,L_exp", BATTERY, ids=[b[0] for b in BATTERY])
def test_verdict_matches_singular_estimate(text, dim, verdict, L_exp):
    f = pf(text, dim)
    rep = L.lipschitz_at_infinity(f)
    est = estimate_at_infinity(f)
    assert rep.verdict.verdict == verdict
    assert rep.verdict.holds == est.singular.is_zero()
    if L_exp is not None:
        assert rep.L_estimate == pytest.approx(L_exp, abs=1e-9)
    if rep.verdict.holds:
        P = est.limiting.points
        assert len(P) and np.linalg.norm(P, axis=1).max() <= rep.L_estimate + 0.05


def test_sqrt_growth_has_vanishing_constant():
    rep = L.lipschitz_at_infinity(pf("sqrt(abs(x1) + abs(x2))", 2))
    assert rep.L_estimate < 0.05


@pytest.mark.parametrize("text,dim", [("abs(x1)", 1), ("max(x1, 2*x1)", 1), ("abs(x1) + 0.5*abs(x2)", 2)])
def test_difference_quotients_respect_the_bound(text, dim):
    f = pf(text, dim)
    rep = L.lipschitz_at_infinity(f)
    q = L.difference_quotients(f, rep.R_estimate, 2048.0)
    assert len(q) and q.max() <= rep.L_estimate * 1.02


def test_clarke_hull_of_abs():
    H = L.clarke_at_infinity(pf("abs(x1)", 1))
    assert H.convex and sorted(H.points.ravel()) == pytest.approx([-1.0, 1.0], abs=1e-7)


def test_clarke_hull_is_idempotent():
    H = L.clarke_at_infinity(pf("abs(x1) + 0.5*abs(x2)", 2))
    assert truncated_hausdorff(convex_hull(H), H) <= 0.005


def test_unbounded_pieces():
    assert L.unbounded_pieces(pf("abs(x1)", 1)).ravel().tolist() == [-1.0, 1.0]
    # the flat piece of max(|x| - 5, 0) is bounded, so only the slopes +-1 survive
    assert L.unbounded_pieces(pf("max(abs(x1) - 5, 0)", 1)).ravel().tolist() == [-1.0, 1.0]
    A = L.unbounded_pieces(pf("max(max(x1, x2), -x1 - x2)", 2))
    assert A.tolist() == [[-1, -1], [0, 1], [1, 0]]
    with pytest.raises(NotPiecewiseLinear):
        L.unbounded_pieces(pf("x1^2", 1))


def test_piecewise_linear_exact_bound():
    bound, rep = L.piecewise_linear_exact(pf("max(x1, 2*x1)", 1))
    assert sorted(bound.points.ravel()) == [1.0, 2.0] and bound.convex
    assert rep.verdict.holds and rep.L_estimate == 2.0
    bound, _ = L.piecewise_linear_exact(pf("3*x1 - 1", 1))
    assert bound.points.tolist() == [[3.0]]


@given(a=st.floats(0.5, 3).map(lambda v: round(v, 2)), b=st.floats(-3, 3).map(lambda v: round(v, 2)))
def test_exact_bound_contains_direct_estimate(a, b):
    f = pf(f"max({-a}*x1, {b}*x1 + 1)", 1)
    bound, rep = L.piecewise_linear_exact(f)
    assert rep.verdict.holds


def test_distance_function_cases():
    lim, sing = L.distance_subdiff_at_infinity(S.ball([0.0], 1.0))
    assert sorted(lim.points.ravel()) == [-1.0, 1.0] and sing.is_zero()
    lim, sing = L.distance_subdiff_at_infinity(S.whole_space(2))
    assert lim.points.tolist() == [[0.0, 0.0]] and sing.is_zero()
    # half-line: flat inside, slope -1 on the far side
    lim, _ = L.distance_subdiff_at_infinity(S.parse_set("x1 >= 0", 1))
    assert truncated_hausdorff(lim, LimitSet.from_points([[-1.0], [0.0]])) <= 0.05


def test_distance_to_halfplane():
    # projection onto {x1 <= 0} gives unit offset (1, 0); N cap B is the segment [0, 1] x {0}
    lim, sing = L.distance_subdiff_at_infinity(S.parse_set("x1 <= 0", 2))
    expect = LimitSet.from_points([[0.0, 0.0], [1.0, 0.0]], convex=True)
    assert truncated_hausdorff(lim, expect) <= 0.05 and sing.is_zero()
