import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizon import expr as E
from horizon import infinity as F
from horizon.errors import DomainBoundedError, SemanticError
from horizon.limitset import LimitSet, SamplingPlan, truncated_hausdorff

pf = E.parse_function
TOL = 0.05


def pts(*p):
    return LimitSet.from_points(np.array(p, float).reshape(len(p), -1))


def cone(*rays, dim=1):
    return LimitSet.cone(rays, dim) if rays else LimitSet.zero_cone(dim)


# limits of gradients along escaping sequences, worked out by hand
DIRECT = [
    ("abs(x1)", 1, pts([-1], [1]), cone()),
    ("exp(x1)", 1, pts([0]), cone([1])),
    ("2*exp(x1)", 1, pts([0]), cone([1])),
    ("1.5*exp(-2*x1)", 1, pts([0]), cone([-1])),
    ("exp(-x1^2)", 1, pts([0]), cone()),
    ("x1^3", 1, LimitSet.empty(1), cone([1])),
    ("-x1^2", 1, LimitSet.empty(1), cone([-1], [1])),
    ("2*x1 + 3", 1, pts([2]), cone()),
    ("max(x1, 2*x1)", 1, pts([1], [2]), cone()),
]


@pytest.mark.parametrize("text,dim,lim,sing", DIRECT, ids=[c[0] for c in DIRECT])
def test_direct_route_examples(text, dim, lim, sing):
    est = F.estimate_at_infinity(pf(text, dim))
    assert truncated_hausdorff(est.limiting, lim) <= TOL
    assert truncated_hausdorff(est.singular, sing) <= TOL


def test_cubic_plus_linear_has_an_anchored_ray():
    est = F.estimate_at_infinity(pf("x1^3 + x2", 2))
    expect = LimitSet(2, [[0, 1]], [[1, 0]], (0,))
    assert truncated_hausdorff(est.limiting, expect) <= TOL


@pytest.mark.parametrize("text", ["abs(x1)", "exp(x1)", "x1^3", "5", "2*x1 + 3"])
def test_epigraph_route_agrees_with_direct_route(text):
    f = pf(text, 1)
    est = F.estimate_at_infinity(f)
    lim, sing = F.subdiff_at_infinity_via_epigraph(f)
    assert truncated_hausdorff(lim, est.limiting) <= TOL
    assert truncated_hausdorff(sing, est.singular) <= TOL


def test_pointwise_singular_limit_is_strictly_smaller_for_the_cube():
    est = F.estimate_at_infinity(pf("x1^3", 1))
    assert len(est.pointwise_singular_rays) == 0
    assert est.singular.contains([1.0]) and not est.singular.is_zero()


def test_singular_estimate_is_a_cone():
    for text in ("exp(x1)", "-x1^2", "abs(x1)"):
        S = F.estimate_at_infinity(pf(text, 1)).singular
        assert S.is_cone and S.contains([0.0])


def test_bounded_domain_is_rejected():
    with pytest.raises(SemanticError):
        pf("indicator(x1 >= 0 & x1 <= 1)", 1)
    f = pf("indicator(x1 >= 0 & x1 <= 1)", 1, validate=False)
    with pytest.raises(DomainBoundedError):
        F.estimate_at_infinity(f)


def test_scaling_identities():
    for text, dim in [("abs(x1)", 1), ("exp(x1)", 1), ("x1^3", 1), ("x1^3 + x2", 2)]:
        assert F.check_scaling_identities(pf(text, dim), 2.5).holds
    with pytest.raises(ValueError):
        F.check_scaling_identities(pf("abs(x1)", 1), 0.0)


def test_report_is_deterministic():
    f = pf("abs(x1) + x2", 2)
    a = json.dumps(F.infinity_report(f), sort_keys=True)
    b = json.dumps(F.infinity_report(f), sort_keys=True)
    assert a == b


slope = st.floats(0.5, 3.0).map(lambda v: round(v, 2))
sign = st.sampled_from([-1, 1])


@st.composite
def one_dim_function(draw):
    a, b = draw(slope) * draw(sign), draw(slope) * draw(sign)
    k = draw(st.integers(0, 3))
    return [f"{abs(a)}*abs(x1) + {b}*x1", f"max({a}*x1, {b}*x1)", f"{abs(b)}*exp({a}*x1)",
            f"{a}*x1^3 + {b}*x1"][k]


@given(text=one_dim_function())
def test_nonemptiness_never_fails(text):
    assert not F.check_nonemptiness(pf(text, 1)).fails


@given(a=slope, b=slope)
def test_abs_plus_linear_matches_closed_form(a, b):
    # gradients are b - a and b + a on the two half-lines
    est = F.estimate_at_infinity(pf(f"{a}*abs(x1) + {b}*x1", 1))
    assert truncated_hausdorff(est.limiting, pts([b - a], [b + a])) <= TOL
    assert est.singular.is_zero()


def test_plan_controls_the_sample_budget(small_plan):
    est = F.estimate_at_infinity(pf("abs(x1)", 1), small_plan)
    assert len(est.trace) == small_plan.levels
    assert est.plan == small_plan
