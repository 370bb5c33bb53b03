"""Acceptance suite: one marked group of tests per criterion.

The terminal summary prints a PASS/FAIL line for each criterion (see conftest.py).
"""
import json
import time

import numpy as np
import pytest

from horizon import calculus as K
from horizon import cones as C
from horizon import expr as E
from horizon import infinity as F
from horizon import lipschitz as L
from horizon import optimality as O
from horizon import sets as S
from horizon.errors import CoercivityFailed, QualificationFailed
from horizon.limitset import LimitSet, SamplingPlan, truncated_hausdorff

pf = E.parse_function
TOL = 0.05
crit = pytest.mark.criterion


def cone(*rays):
    return LimitSet.cone(rays, 2) if rays else LimitSet.zero_cone(2)


def pts(*p):
    return LimitSet.from_points(np.array(p, float).reshape(len(p), -1))


# ---------------------------------------------------------------------------
# 1. normal cones at infinity of the hyperbola
# ---------------------------------------------------------------------------

HYPERBOLA = S.parse_set("set { h: x1*x2 = 1; }", 2)
BRANCH = S.parse_set("set { g: x1*x2 >= 1, x1 >= 0; }", 2)

# the one-sided cones stated for the equality set
STATED = {(1,): cone([0, -1]), (2,): cone([-1, 0]), (1, 2): cone([0, -1], [-1, 0])}
# the equality set is a smooth curve, so its pointwise normal cones are full lines
LINES = {(1,): cone([0, -1], [0, 1]), (2,): cone([-1, 0], [1, 0]),
         (1, 2): cone([0, -1], [0, 1], [-1, 0], [1, 0])}


def _timed_cone(Omega, I):
    t = time.perf_counter()
    N = C.normal_cone_at_infinity(Omega, I)
    return N, time.perf_counter() - t


@crit(1, "hyperbola cones at infinity as stated, I = {1}, {2}, {1,2}")
@pytest.mark.parametrize("I", [(1,), (2,), (1, 2)], ids=["I1", "I2", "I12"])
def test_c1_equality_set_matches_stated_cones(I):
    # stays red: the estimator returns two-sided lines (see test below), which sit at
    # truncated distance 2 from the stated one-sided cones
    N, dt = _timed_cone(HYPERBOLA, I)
    assert dt < 5.0
    assert truncated_hausdorff(N, STATED[I]) <= TOL


@crit(1, "hyperbola cones at infinity as stated, I = {1}, {2}, {1,2}")
@pytest.mark.parametrize("I", [(1,), (2,), (1, 2)], ids=["I1", "I2", "I12"])
def test_c1_equality_set_gives_normal_lines(I):
    N, dt = _timed_cone(HYPERBOLA, I)
    assert dt < 5.0
    assert truncated_hausdorff(N, LINES[I]) <= TOL


@crit(1, "hyperbola cones at infinity as stated, I = {1}, {2}, {1,2}")
@pytest.mark.parametrize("I", [(1,), (2,), (1, 2)], ids=["I1", "I2", "I12"])
def test_c1_positive_branch_reproduces_stated_cones(I):
    # the one-sided cones are those of the branch {x1 x2 >= 1, x1 >= 0}
    N, dt = _timed_cone(BRANCH, I)
    assert dt < 5.0
    assert truncated_hausdorff(N, STATED[I]) <= TOL


# ---------------------------------------------------------------------------
# 2. the exponential epigraph
# ---------------------------------------------------------------------------

EXP_EPI = S.parse_set("set { g: x2 >= exp(x1); }", 2)
EXP_CONES = {(1,): cone([0, -1], [1, 0]), (2,): cone([1, 0]), (1, 2): cone([0, -1], [1, 0])}


@crit(2, "exponential epigraph cones at infinity, all index sets")
@pytest.mark.parametrize("I", [(1,), (2,), (1, 2)], ids=["I1", "I2", "I12"])
def test_c2_exp_epigraph_cones(I):
    N, dt = _timed_cone(EXP_EPI, I)
    assert dt < 5.0
    assert truncated_hausdorff(N, EXP_CONES[I]) <= TOL


# ---------------------------------------------------------------------------
# 3. subdifferentials at infinity of x1^3 + x2 and |x|
# ---------------------------------------------------------------------------

@crit(3, "subdifferential at infinity of x1^3 + x2 and |x|")
def test_c3_cubic_plus_linear_is_a_half_line():
    est = F.estimate_at_infinity(pf("x1^3 + x2", 2))
    half_line = LimitSet(2, [[0, 1]], [[1, 0]], (0,))  # R_+ x {1}
    assert truncated_hausdorff(est.limiting, half_line) <= TOL


@crit(3, "subdifferential at infinity of x1^3 + x2 and |x|")
def test_c3_abs_exact_on_the_piecewise_linear_path():
    f = pf("abs(x1)", 1)
    assert L.unbounded_pieces(f).ravel().tolist() == [-1.0, 1.0]
    est = F.estimate_at_infinity(f)
    assert sorted(est.limiting.points.ravel()) == [-1.0, 1.0] and not len(est.limiting.rays)


# ---------------------------------------------------------------------------
# 4. e^x by two routes
# ---------------------------------------------------------------------------

@crit(4, "exp: ({0}, R_+) by the direct and epigraph routes")
def test_c4_exp_two_routes():
    f = pf("exp(x1)", 1)
    est = F.estimate_at_infinity(f)
    lim, sing = F.subdiff_at_infinity_via_epigraph(f)
    zero, half = pts([0.0]), LimitSet.cone([[1.0]], 1)
    for A, B in ((est.limiting, zero), (est.singular, half), (lim, zero), (sing, half),
                 (est.limiting, lim), (est.singular, sing)):
        assert truncated_hausdorff(A, B) <= TOL


# ---------------------------------------------------------------------------
# 5. x^3: pointwise singular limits miss the singular cone at infinity
# ---------------------------------------------------------------------------

@crit(5, "x^3: limit of pointwise singular sets strictly inside the singular cone")
def test_c5_cube_strictness():
    est = F.estimate_at_infinity(pf("x1^3", 1))
    pointwise = LimitSet.cone(est.pointwise_singular_rays, 1) if len(est.pointwise_singular_rays) \
        else LimitSet.zero_cone(1)
    assert pointwise.is_zero()
    assert truncated_hausdorff(est.singular, LimitSet.cone([[1.0]], 1)) <= TOL
    # strict: the inclusion holds one way and the sets differ
    assert K.inclusion_certificate(pointwise, est.singular).holds
    assert truncated_hausdorff(pointwise, est.singular) > TOL


# ---------------------------------------------------------------------------
# 6. Lipschitz at infinity iff the singular cone is {0}
# ---------------------------------------------------------------------------

BATTERY = [("abs(x1)", 1), ("sqrt(abs(x1) + abs(x2))", 2), ("max(x1, -2*x1) + 3", 1),
           ("exp(x1)", 1), ("x1^3", 1), ("2*x1 + 3", 1)]


@crit(6, "Lipschitz verdict equals (singular cone = {0}) on the battery")
@pytest.mark.parametrize("text,dim", BATTERY, ids=[b[0] for b in BATTERY])
def test_c6_biconditional(text, dim):
    f = pf(text, dim)
    rep = L.lipschitz_at_infinity(f)
    est = F.estimate_at_infinity(f)
    assert not rep.verdict.inconclusive
    assert rep.verdict.holds == est.singular.is_zero()
    if rep.verdict.holds:
        P = est.limiting.points
        assert len(P) and np.linalg.norm(P, axis=1).max() <= rep.L_estimate + 0.05


# ---------------------------------------------------------------------------
# 7. Clarke hull of |x|
# ---------------------------------------------------------------------------

@crit(7, "Clarke hull of |x| at infinity is [-1, 1]")
def test_c7_clarke_hull():
    H = L.clarke_at_infinity(pf("abs(x1)", 1))
    lo, hi = sorted(H.points.ravel())
    assert H.convex and abs(lo + 1) <= 1e-7 and abs(hi - 1) <= 1e-7


# ---------------------------------------------------------------------------
# 8. chain-rule counterexample
# ---------------------------------------------------------------------------

@crit(8, "chain rule: coercivity Fails and the direct estimate is {0, 1}")
def test_c8_chain_counterexample():
    f = pf("piecewise(x1 > 0 : -log(x1); x1 <= 0 : 0)", 1)
    g = pf("piecewise(x1 > 0 : exp(-x1); x1 <= 0 : -1)", 1)
    with pytest.raises(CoercivityFailed) as exc:
        K.chain_rule_at_infinity(f, [g], SamplingPlan(levels=8))
    assert truncated_hausdorff(exc.value.direct, pts([0.0], [1.0])) <= TOL


# ---------------------------------------------------------------------------
# 9. unattained infima satisfy the condition at infinity
# ---------------------------------------------------------------------------

UNATTAINED = [("exp(x1) + x2^2", "whole"), ("(x1*x2 - 1)^2 + x1^2", "whole"),
              ("x2", "set { g: 1 - x1^2*x2; }")]


@crit(9, "unattained infima flagged and the condition at infinity Holds")
@pytest.mark.parametrize("text,omega", UNATTAINED, ids=["exp-quadratic", "valley", "cusp-set"])
def test_c9_unattained(text, omega):
    t = time.perf_counter()
    P = O.ProblemSpec(pf(text, 2), S.parse_set(omega, 2), M=20.0, grid_step=0.05)
    diag = O.diagnose_attainment(P)
    assert diag["unattained"] and diag["condition"]["verdict"] == "Holds"
    assert time.perf_counter() - t < 30.0


# ---------------------------------------------------------------------------
# 10. coercivity and weak sharp minima
# ---------------------------------------------------------------------------

@crit(10, "coercivity, Sol = {0} and the weak sharp constant")
@pytest.mark.parametrize("text,c_exact", [("x1^2 + x2^2", 16.0), ("abs(x1) + abs(x2)", 1.0)],
                         ids=["quadratic", "l1"])
def test_c10_weak_sharp(text, c_exact):
    # levels = 4 puts the second-to-last radius at R = 16, where |x|^2 / |x| = 16
    P = O.ProblemSpec(pf(text, 2), S.whole_space(2), SamplingPlan(levels=4))
    cert, sol, (c, R) = O.certify_coercivity(P)
    assert cert.holds and sol.certified_compact
    assert np.abs(sol.points).max() <= P.grid_step
    assert R == 16.0 and abs(c - c_exact) <= 0.15 * c_exact


# ---------------------------------------------------------------------------
# 11. stability under tilts
# ---------------------------------------------------------------------------

@crit(11, "tilt stability: distance eps/2, decreasing in eps")
def test_c11_stability():
    P = O.ProblemSpec(pf("x1^2 + x2^2", 2), S.whole_space(2), SamplingPlan(levels=4))
    rep = O.stability_scan(P, (0.5, 0.25, 0.125))
    eps = [r["eps"] for r in rep["rows"]]
    d = [r["max_distance"] for r in rep["rows"]]
    assert eps == [0.5, 0.25, 0.125]
    for e, di in zip(eps, d):
        assert abs(di - e / 2) <= P.grid_step
    assert d[0] > d[1] > d[2] and rep["monotone"]


# ---------------------------------------------------------------------------
# 12. property suites on random structured instances
# ---------------------------------------------------------------------------

N_INSTANCES = 50


def _coef(rng, lo=0.5, hi=3.0):
    return float(np.round(rng.uniform(lo, hi), 2)) * (1 if rng.random() < 0.5 else -1)


def random_text(rng):
    """A random (text, dim) from seven structured families."""
    k = int(rng.integers(7))
    a, b, c = _coef(rng), _coef(rng), abs(_coef(rng))
    return [
        (f"{abs(a)}*abs(x1) + {b}*x1", 1),
        (f"max({a}*x1, {b}*x1)", 1),
        (f"{c}*exp({a}*x1)", 1),
        (f"{a}*x1^3 + {b}*x1", 1),
        (f"{abs(a)}*abs(x1) + {c}*abs(x2) + {b}*x2", 2),
        (f"min({a}*x1, {b}*x1) + {c}*x2", 2),
        (f"sqrt({c}*abs(x1) + 1) + {b}*x1", 1),
    ][k]


def _instances(seed, dim=None):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < N_INSTANCES:
        text, d = random_text(rng)
        if dim is None or d == dim:
            out.append(pf(text, d))
    return out


@crit(12, "property suites on random structured instances")
def test_c12_scaling_identities():
    rng = np.random.default_rng(120)
    for f in _instances(12):
        lam = float(np.round(rng.uniform(0.2, 4.0), 2))
        assert F.check_scaling_identities(f, lam).holds, f.text


@crit(12, "property suites on random structured instances")
@pytest.mark.parametrize("rule", ["sum", "max", "min"])
def test_c12_rules_never_fail_when_qualified(rule):
    fn = {"sum": K.sum_rule_at_infinity, "max": K.max_rule_at_infinity, "min": K.min_rule_at_infinity}[rule]
    rng = np.random.default_rng({"sum": 1, "max": 2, "min": 3}[rule])
    verdicts = []
    for _ in range(N_INSTANCES):
        (t1, d), (t2, d2) = random_text(rng), random_text(rng)
        if d2 > d:
            t2 = t2.replace("x2", "x1")  # fold the second variable onto the first
        f1, f2 = pf(t1, d), pf(t2, d)
        try:
            _, cert = fn(f1, f2)
        except QualificationFailed as exc:
            assert exc.report.verdict.fails and exc.report.witness is not None
            verdicts.append("unqualified")
            continue
        assert not cert.fails
        verdicts.append(cert.verdict.value)
    print(f"{rule} rule: {verdicts.count('Holds')} Holds of {len(verdicts)}")
    assert verdicts.count("Holds") >= 0.8 * N_INSTANCES


@crit(12, "property suites on random structured instances")
def test_c12_qualification_counterexample():
    with pytest.raises(QualificationFailed) as exc:
        K.sum_rule_at_infinity(pf("-x1^2", 1), pf("x1^2", 1))
    rep = exc.value.report
    assert rep.verdict.fails and rep.witness is not None and np.linalg.norm(rep.witness) > 0


@crit(12, "property suites on random structured instances")
def test_c12_nonemptiness_never_fails():
    for f in _instances(13):
        assert not F.check_nonemptiness(f).fails, f.text


@crit(12, "property suites on random structured instances")
def test_c12_seeded_runs_are_byte_identical():
    for f in _instances(14, dim=1):
        plan = SamplingPlan(seed=5)
        a = json.dumps(F.infinity_report(f, plan), sort_keys=True)
        b = json.dumps(F.infinity_report(f, plan), sort_keys=True)
        assert a == b


# ---------------------------------------------------------------------------
# 13. product rule strictness
# ---------------------------------------------------------------------------

@crit(13, "product of half-lines: {0} strictly inside the direct cone")
def test_c13_product_strictness():
    half = S.parse_set("x1 >= 0", 1)
    prod, direct, cert = C.product_cone(half, [1], half, [1])
    assert prod.is_zero()
    assert truncated_hausdorff(direct, cone([-1, 0], [0, -1])) <= TOL
    assert cert.holds and cert.note == "strict inclusion"
    assert truncated_hausdorff(prod, direct) > TOL
