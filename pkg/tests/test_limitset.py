import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon.limitset import (LimitSet, SamplingPlan, cluster, convex_hull, directed_excess, min_norm,
                              min_norm_cone, min_norm_convex, min_norm_hull, minkowski_sum, safe_normalize,
                              spiral_directions, truncated_hausdorff, union)

angle = st.floats(0.0, math.pi / 2)
coords = st.floats(-3, 3, allow_nan=False)


def brute_min_norm_hull(P):
    """Least-norm point of conv(P) by enumerating supporting simplices."""
    m, n = P.shape
    best = np.inf
    for k in range(1, min(m, n + 1) + 1):
        for S in itertools.combinations(range(m), k):
            Q = P[list(S)]
            M = np.block([[Q @ Q.T, np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
            rhs = np.r_[np.zeros(k), 1.0]
            w = np.linalg.lstsq(M, rhs, rcond=None)[0][:k]
            if np.all(w >= -1e-10):
                best = min(best, float(np.linalg.norm(w @ Q)))
    return best


# ---------------------------------------------------------------------------
# plan and helpers
# ---------------------------------------------------------------------------

def test_plan_defaults_and_refinement():
    p = SamplingPlan()
    assert np.allclose(p.radii()[:3], [4, 8, 16]) and len(p.radii()) == 10
    q = p.refined()
    assert (q.dirs_per_level, q.levels) == (128, 11)
    assert SamplingPlan.from_dict(p.to_dict()) == p


@pytest.mark.parametrize("kw", [dict(r0=0), dict(rho=1.0), dict(levels=2), dict(cluster_tol=0),
                                dict(divergence_threshold=1), dict(dirs_per_level=1)])
def test_plan_validation(kw):
    with pytest.raises(ValueError):
        SamplingPlan(**kw)


@pytest.mark.parametrize("n,k", [(1, 2), (2, 16), (3, 50), (5, 40)])
def test_spiral_directions_are_unit(n, k):
    D = spiral_directions(n, k)
    assert np.allclose(np.linalg.norm(D, axis=1), 1.0)
    assert np.array_equal(D, spiral_directions(n, k))


def test_safe_normalize_handles_infinities():
    V = safe_normalize([[np.inf, 1.0], [3.0, 4.0], [0.0, 0.0]])
    assert np.allclose(V, [[1, 0], [0.6, 0.8], [0, 0]])


def test_cluster_is_order_independent():
    V = np.array([[0.0, 0.0], [0.01, 0.0], [1.0, 1.0], [1.005, 1.0]])
    a, ca = cluster(V, 0.02)
    b, cb = cluster(V[::-1], 0.02)
    assert np.allclose(a, b) and list(ca) == list(cb) == [2, 2]


# ---------------------------------------------------------------------------
# LimitSet
# ---------------------------------------------------------------------------

def test_canonical_form_and_round_trip():
    A = LimitSet(2, [[1, 0], [0, 0], [1, 0]], [[0, 2]], (0,))
    assert A.points.tolist() == [[0, 0], [1, 0]]
    assert A.anchors == (1,) and np.allclose(A.rays, [[0, 1]])
    B = LimitSet.from_dict(json.loads(json.dumps(A.to_dict())))
    assert truncated_hausdorff(A, B) == 0.0 and B.anchors == A.anchors


def test_cone_rejects_nonzero_points():
    with pytest.raises(ValueError):
        LimitSet(1, [[1.0]], is_cone=True)


def test_distance_to_anchored_ray():
    A = LimitSet(2, [[0, 1]], [[1, 0]], (0,))
    assert A.distance_to([5, 3]) == pytest.approx(2.0)
    assert A.distance_to([-3, 1]) == pytest.approx(3.0)
    assert A.contains([7, 1])


@given(th=angle)
def test_hausdorff_between_two_rays(th):
    # closed form: the far end of one truncated ray is T sin(theta) from the other
    A = LimitSet.cone([[1, 0]])
    B = LimitSet.cone([[math.cos(th), math.sin(th)]])
    assert truncated_hausdorff(A, B) == pytest.approx(2 * math.sin(th), abs=0.006)


@given(a=st.lists(st.tuples(coords, coords), min_size=1, max_size=4),
       b=st.lists(st.tuples(coords, coords), min_size=1, max_size=4))
def test_hausdorff_on_points_matches_direct_formula(a, b):
    # A is cut at T = 2, B at T + 1
    A, B = LimitSet.from_points(a), LimitSet.from_points(b)
    PA = [p for p in A.points if np.linalg.norm(p) <= 2]
    PB = [q for q in B.points if np.linalg.norm(q) <= 3]
    if not PA:
        expect = 0.0
    elif not PB:
        expect = math.inf
    else:
        expect = max(min(np.linalg.norm(p - q) for q in PB) for p in PA)
    assert directed_excess(A, B) == pytest.approx(expect)
    assert truncated_hausdorff(A, B) == truncated_hausdorff(B, A)


def test_convex_set_sampling():
    A = LimitSet.from_points([[-1], [1]], convex=True)
    B = LimitSet.from_points([[-1], [0], [1]])
    assert directed_excess(A, B) == pytest.approx(0.5, abs=0.006)
    assert directed_excess(B, A) <= 0.005  # grid resolution h


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------

def test_minkowski_sum_of_points_and_rays():
    A = LimitSet.from_points([[-1], [1]])
    B = LimitSet.from_points([[0], [2]])
    assert minkowski_sum(A, B).points.ravel().tolist() == [-1, 1, 3]
    C = minkowski_sum(LimitSet.from_points([[0, 1]]), LimitSet.cone([[1, 0]]))
    assert C.contains([10, 1]) and not C.contains([-1, 1])


def test_union_and_hull():
    U = union(LimitSet.from_points([[1.0]]), LimitSet.cone([[-1.0]]))
    assert U.contains([1.0]) and U.contains([-5.0]) and not U.contains([0.5])
    H = convex_hull(LimitSet.from_points([[0, 0], [1, 0], [0, 1], [0.2, 0.2]]))
    assert len(H.points) == 3 and H.contains([0.3, 0.3])


@given(P=st.lists(st.tuples(coords, coords, coords), min_size=1, max_size=6))
def test_min_norm_hull_matches_simplex_enumeration(P):
    P = np.array(P)
    x, w = min_norm_hull(P)
    assert w.min() >= -1e-9 and w.sum() == pytest.approx(1.0)
    assert np.allclose(w @ P, x, atol=1e-8)
    assert np.linalg.norm(x) == pytest.approx(brute_min_norm_hull(P), abs=1e-6)


def test_min_norm_cone_closed_form():
    # distance from v to the quadrant cone({e1, e2})
    R = np.eye(2)
    assert min_norm_cone(R, [-3.0, 4.0]) == pytest.approx(3.0)
    assert min_norm_cone(R, [2.0, 5.0]) == pytest.approx(0.0)
    assert min_norm_convex(np.array([[1.0, 1.0]]), np.array([[-1.0, 0.0]])) == pytest.approx(1.0)


def test_min_norm_of_empty_is_infinite():
    assert min_norm(LimitSet.empty(2)) == math.inf
