import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horizon import expr as E
from horizon import optimality as O
from horizon import pointwise as Pw
from horizon import sets as S
from horizon.errors import (AssumptionViolated, ConditionNotRefuted, NoMultipliersFound, NotBoundedBelow,
                            NotLipschitzAtInfinity)
from horizon.limitset import SamplingPlan

pf = E.parse_function
SHORT = SamplingPlan(levels=4)


def problem(text, dim, omega="whole", **kw):
    return O.ProblemSpec(pf(text, dim), S.parse_set(omega, dim), **kw)


# ---------------------------------------------------------------------------
# problem validation and assumptions
# ---------------------------------------------------------------------------

def test_problem_validation():
    with pytest.raises(ValueError):
        O.ProblemSpec(pf("x1", 1), S.whole_space(2))
    with pytest.raises(ValueError):
        problem("x1^2", 1, M=0)
    with pytest.raises(AssumptionViolated) as exc:
        problem("x1", 1, "ball(0; 1)")
    assert exc.value.assumption == "A1"


def test_unbounded_below_is_detected():
    with pytest.raises(AssumptionViolated) as exc:
        O.check_bounded_below(problem("x1", 1))
    assert exc.value.assumption == "A3" and exc.value.witness is not None


def test_singular_cone_against_normal_cone_is_detected():
    # exp(x1) is singular along e1 and {x1 >= 0} has normal -e1 at infinity
    with pytest.raises(AssumptionViolated) as exc:
        O.check_condition_at_infinity(problem("exp(x1)", 2, "x1 >= 0"))
    assert exc.value.assumption == "A2"


# ---------------------------------------------------------------------------
# grid oracle
# ---------------------------------------------------------------------------

def test_brute_force_on_a_shifted_parabola():
    sol = O.brute_force_minimize(problem("(x1 - 1)^2", 1))
    assert sol.f_star == pytest.approx(0.0, abs=1e-12)
    assert sol.points[:, 0] == pytest.approx([1.0], abs=1e-6)
    assert sol.certified_compact and not sol.decreasing


def test_brute_force_flags_an_unattained_infimum():
    sol = O.brute_force_minimize(problem("exp(x1) + x2^2", 2))
    assert sol.decreasing and not sol.certified_compact


def test_grid_points_respect_the_cap():
    X, step = O.grid_points(2, 20.0, 0.05, max_points=10_000)
    assert len(X) <= 10_000 and step > 0.05
    assert np.abs(X).max() == pytest.approx(20.0)


# ---------------------------------------------------------------------------
# coercivity, weak sharp minima, stability
# ---------------------------------------------------------------------------

def test_condition_fails_for_the_quadratic():
    assert O.check_condition_at_infinity(problem("x1^2 + x2^2", 2, plan=SHORT)).fails


def test_coercivity_needs_a_failed_condition():
    with pytest.raises(ConditionNotRefuted):
        O.certify_coercivity(problem("exp(x1) + x2^2", 2))


@pytest.mark.parametrize("text", ["x1^2 + x2^2", "abs(x1) + abs(x2)"])
def test_weak_sharp_inequality_on_samples(text):
    P = problem(text, 2, plan=SHORT)
    cert, sol, (c, R) = O.certify_coercivity(P)
    assert cert.holds
    X = np.random.default_rng(1).normal(size=(500, 2))
    X = R * (1 + 3 * np.random.default_rng(2).random(500))[:, None] * X / np.linalg.norm(X, axis=1)[:, None]
    v = E.eval_batch(P.f, X)
    dist = np.linalg.norm(X[:, None, :] - sol.points[None], axis=2).min(axis=1)
    assert np.all(v - sol.f_star >= c * dist * (1 - 1e-9))


def test_stability_rows_shrink():
    rep = O.stability_scan(problem("x1^2 + x2^2", 2, plan=SHORT))
    d = [r["max_distance"] for r in rep["rows"]]
    # argmin of |x|^2 - <u, x> is u / 2
    assert d == pytest.approx([0.25, 0.125, 0.0625], abs=0.05)
    assert rep["monotone"] and rep["certificate"].holds


# ---------------------------------------------------------------------------
# tilts
# ---------------------------------------------------------------------------

@settings(max_examples=100)
@given(x=st.tuples(st.floats(-4, 4), st.floats(-4, 4)), u=st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_tilt_shifts_the_subdifferential(x, u):
    f = pf("x1^2*x2 + exp(0.3*x2) + abs(x1 - 1)", 2)
    x, u = np.array(x), np.array(u)
    a = Pw.subdiff_at(E.tilt(f, u), x).values
    b = Pw.subdiff_at(f, x).values - u
    key = lambda V: V[np.lexsort(V.T[::-1])]
    assert np.allclose(key(a), key(b), atol=1e-6)


# ---------------------------------------------------------------------------
# Lagrange multipliers and Ekeland refinement
# ---------------------------------------------------------------------------

def test_lagrange_multiplier_for_a_halfplane():
    lams, mus, cert = O.lagrange_at_infinity(pf("x1", 2), [pf("-x1", 2)])
    assert lams.tolist() == pytest.approx([1.0]) and cert.holds and len(mus) == 0


def test_lagrange_errors():
    with pytest.raises(NoMultipliersFound):
        O.lagrange_at_infinity(pf("x1 + x2", 2), [pf("-x1", 2)])
    with pytest.raises(NotLipschitzAtInfinity):
        O.lagrange_at_infinity(pf("x1", 1), [pf("x1^2", 1)])


def test_ekeland_postconditions():
    f = pf("x1^2 + x2^2", 2)
    x0, eps, lam = np.array([0.1, 0.0]), 0.05, 0.5
    x1 = O.ekeland_refine(f, S.whole_space(2), x0, eps, lam)
    f1 = E.evaluate(f, x1)
    assert f1 <= E.evaluate(f, x0) and np.linalg.norm(x1 - x0) <= lam
    Z = x1 + np.random.default_rng(3).normal(size=(2000, 2)) * 2
    assert np.all(f1 <= E.eval_batch(f, Z) + eps / lam * np.linalg.norm(Z - x1, axis=1) + 1e-12)


def test_ekeland_errors():
    f = pf("x1^2 + x2^2", 2)
    with pytest.raises(ValueError):
        O.ekeland_refine(f, S.whole_space(2), [0.1, 0.0], 0.0, 0.5)
    with pytest.raises(ValueError):
        O.ekeland_refine(f, S.whole_space(2), [3.0, 0.0], 0.05, 0.5)
    with pytest.raises(NotBoundedBelow):
        O.ekeland_refine(pf("x1", 1), S.whole_space(1), [0.0], 0.05, 0.5)
