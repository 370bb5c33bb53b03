"""Calculus rules at infinity and the qualification conditions they rely on."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import expr as E
from . import sets as S_
from .certificate import Certificate, fails, holds, inconclusive
from .cones import HAUSDORFF_TOL, _angular_overlap, estimate_normal_cone
from .errors import (CoercivityFailed, EmptyOrBoundedConstraintSet, NotLipschitzAtInfinity,
                     QualificationFailed, UnboundedProjectionRequired)
from .infinity import estimate_at_infinity
from .limitset import (DEFAULT_T, LimitSet, SamplingPlan, angle_between, directed_excess, min_norm, min_norm_cone,
                       min_norm_hull, minkowski_sum, safe_normalize, spiral_directions, union)
from .lipschitz import lipschitz_at_infinity
from .polyhedral import is_feasible, polyhedron_unbounded

SINGULAR_SUM = "SingularSum"
NORMAL_INTERSECTION = "NormalIntersection"
CHAIN_COERCIVE = "ChainCoercive"
CONSTRAINT_AT_INFINITY = "ConstraintAtInfinity"

LAMBDA_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


@dataclass
class QualificationReport:
    kind: str
    verdict: Certificate
    witness: np.ndarray | None = None
    distance: float | None = None

    def __post_init__(self):
        if self.verdict.fails and self.witness is None:
            raise ValueError("a failed qualification needs a witness")
        if self.witness is not None:
            self.witness = np.asarray(self.witness, float)
            if not self.verdict.fails:
                self.witness = None
            elif np.linalg.norm(self.witness) < 1e-6:
                raise ValueError("witness must be nonzero")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "verdict": self.verdict.to_dict(),
             "witness": None if self.witness is None else self.witness.tolist()}
        if self.distance is not None:
            d["distance"] = self.distance
        return d


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _all_dirs(A: LimitSet) -> np.ndarray:
    return A.rays


def inclusion_certificate(direct: LimitSet, bound: LimitSet, note: str = "", extra=None) -> Certificate:
    """Truncated inclusion direct in bound, plus an angular test on ray directions.

    The rules are theorems, so a violation signals under-resolved estimates and
    is reported as Inconclusive rather than Fails.
    """
    excess = directed_excess(direct, bound)
    # truncation hides points beyond B_T, so check those exactly
    far = direct.points[np.linalg.norm(direct.points, axis=1) > DEFAULT_T]
    if len(far):
        excess = max(excess, float(bound.distances_to(far).max()) if not bound.is_empty() else np.inf)
    da, db = _all_dirs(direct), _all_dirs(bound)
    if len(da) and bound.convex and len(db):
        angle = max(float(np.arcsin(min(1.0, min_norm_cone(db, r)))) for r in da)
    elif len(da):
        angle = max(min((angle_between(r, s) for s in db), default=np.pi) for r in da)
    else:
        angle = 0.0
    worst = max(excess, angle)
    trace = [{"excess": excess, "ray_angle": angle, "direct": direct.to_dict(), "bound": bound.to_dict()}]
    if extra:
        trace.append(extra)
    if worst <= HAUSDORFF_TOL:
        return holds(HAUSDORFF_TOL - worst if worst < HAUSDORFF_TOL else HAUSDORFF_TOL, trace=trace,
                     note=note or "direct estimate inside the bound")
    return inconclusive(trace=trace, note="direct estimate leaves the bound")


def lam_circ(lam: float, limiting: LimitSet, singular: LimitSet) -> LimitSet:
    """lam * limiting for lam > 0 and the singular cone for lam = 0."""
    if lam == 0:
        return singular
    if lam == 1:
        return limiting
    if limiting.is_empty():
        return limiting
    return limiting.scaled(lam)


def _scale_any(A: LimitSet, lam: float) -> LimitSet:
    """lam * A for lam >= 0 (0 * A = {0} for nonempty A)."""
    if A.is_empty():
        return A
    if lam == 0:
        return LimitSet.from_points(np.zeros((1, A.dim)), A.dim)
    return A.scaled(lam)


# ---------------------------------------------------------------------------
# sum, max, min
# ---------------------------------------------------------------------------

def check_sum_qualification(f1: E.FunctionSpec, f2: E.FunctionSpec,
                            plan: SamplingPlan | None = None) -> QualificationReport:
    """Singular cones at infinity meet only at 0: S1 cap (-S2) = {0}."""
    plan = plan or SamplingPlan()
    s1 = estimate_at_infinity(f1, plan).singular
    s2 = estimate_at_infinity(f2, plan).singular
    gap, witness = _angular_overlap(s1, s2)
    delta = plan.cluster_tol
    trace = [{"singular_1": s1.to_dict(), "singular_2": s2.to_dict(), "min_gap": gap}]
    if gap <= delta:
        cert = fails(delta - gap if gap < delta else delta, witnesses=[witness], trace=trace,
                     note="common nonzero direction in S1 and -S2")
        return QualificationReport(SINGULAR_SUM, cert, witness)
    margin = min(gap - delta, 1.0) if np.isfinite(gap) else 1.0
    return QualificationReport(SINGULAR_SUM, holds(margin, trace=trace))


def sum_rule_at_infinity(f1: E.FunctionSpec, f2: E.FunctionSpec, plan: SamplingPlan | None = None):
    """(bound d f1(inf) + d f2(inf), inclusion certificate for d(f1+f2)(inf))."""
    plan = plan or SamplingPlan()
    q = check_sum_qualification(f1, f2, plan)
    if not q.verdict.holds:
        raise QualificationFailed("sum qualification fails", q)
    bound = minkowski_sum(estimate_at_infinity(f1, plan).limiting, estimate_at_infinity(f2, plan).limiting)
    direct = estimate_at_infinity(E.add(f1, f2), plan).limiting
    return bound, inclusion_certificate(direct, bound, extra={"qualification": q.to_dict()})


def max_bound(e1, e2, grid=LAMBDA_GRID) -> LimitSet:
    """Union over the lambda grid of lam1 o d f1(inf) + lam2 o d f2(inf)."""
    n = e1.limiting.dim
    out = LimitSet.empty(n)
    for lam in grid:
        a = lam_circ(float(lam), e1.limiting, e1.singular)
        b = lam_circ(float(1 - lam), e2.limiting, e2.singular)
        out = union(out, minkowski_sum(a, b))
    return out


def max_rule_at_infinity(f1: E.FunctionSpec, f2: E.FunctionSpec, plan: SamplingPlan | None = None,
                         grid=LAMBDA_GRID):
    plan = plan or SamplingPlan()
    q = check_sum_qualification(f1, f2, plan)
    if not q.verdict.holds:
        raise QualificationFailed("sum qualification fails", q)
    bound = max_bound(estimate_at_infinity(f1, plan), estimate_at_infinity(f2, plan), grid)
    direct = estimate_at_infinity(E.fmax(f1, f2), plan).limiting
    return bound, inclusion_certificate(direct, bound, extra={"qualification": q.to_dict(),
                                                              "grid": list(grid)})


def min_rule_at_infinity(f1: E.FunctionSpec, f2: E.FunctionSpec, plan: SamplingPlan | None = None):
    plan = plan or SamplingPlan()
    bound = union(estimate_at_infinity(f1, plan).limiting, estimate_at_infinity(f2, plan).limiting)
    direct = estimate_at_infinity(E.fmin(f1, f2), plan).limiting
    return bound, inclusion_certificate(direct, bound)


# ---------------------------------------------------------------------------
# partial subdifferentials
# ---------------------------------------------------------------------------

def project_first(A: LimitSet, n: int) -> LimitSet:
    """Image of A under (u, v) -> u."""
    P = A.points[:, :n]
    R = A.rays[:, :n]
    keep = np.linalg.norm(R, axis=1) > 1e-9 if len(R) else np.zeros(0, bool)
    anchors = tuple(a for a, k in zip(A.anchors, keep) if k)
    return LimitSet(n, P, R[keep], anchors, A.is_cone, A.trunc_radius, A.convex)


def section(phi: E.FunctionSpec, ybar) -> E.FunctionSpec:
    """x -> phi(x, ybar)."""
    ybar = np.atleast_1d(np.asarray(ybar, float))
    n = phi.dim - len(ybar)
    if n <= 0:
        raise ValueError("ybar leaves no x coordinates")
    gs = [E.make_function(E.var(i), n, validate=False) for i in range(n)]
    gs += [E.make_function(E.const(float(c)), n, validate=False) for c in ybar]
    return E.compose(phi, gs)


def _section_condition(phi, ybar, plan):
    """Look for (0, v) singular limits along points (x, ybar) with x escaping.

    Returns the offending unit direction or None.
    """
    from .pointwise import subgradients_batch
    ybar = np.atleast_1d(np.asarray(ybar, float))
    n = phi.dim - len(ybar)
    tau = plan.divergence_threshold
    hits = []
    base = None
    for r in plan.radii()[-plan.stability_window:]:
        D = spiral_directions(n, plan.dirs_per_level, plan.seed) if n > 1 else np.array([[-1.0], [1.0]])
        X = np.column_stack([r * D, np.tile(ybar, (len(D), 1))])
        rv, V, rr, R, rs, Sg, in_dom = subgradients_batch(phi, X)
        if len(V):
            nrm = np.linalg.norm(V, axis=1)
            if base is None:
                fin = nrm[np.isfinite(nrm)]
                base = max(1.0, float(np.median(fin))) if len(fin) else 1.0
            U = safe_normalize(V[~(nrm < tau * base)])
            hits.append([u for u in U if np.linalg.norm(u[:n]) <= plan.cluster_tol])
        else:
            hits.append([])
        hits[-1] += [s for s in Sg if np.linalg.norm(s[:n]) <= plan.cluster_tol]
    # persistent: present at every one of the last levels
    if all(h for h in hits):
        return np.asarray(hits[-1][0])
    return None


def partial_subdiff_check(phi: E.FunctionSpec, ybar, plan: SamplingPlan | None = None) -> Certificate:
    """d_x phi(inf, ybar) sits inside the x-projection of d phi(inf) (and the singular analogue)."""
    plan = plan or SamplingPlan()
    ybar = np.atleast_1d(np.asarray(ybar, float))
    n = phi.dim - len(ybar)
    bad = _section_condition(phi, ybar, plan)
    full = estimate_at_infinity(phi, plan)
    trace = [{"condition_direction": None if bad is None else bad.tolist(),
              "singular_full": full.singular.to_dict()}]
    if bad is not None:
        return inconclusive(trace=trace, witnesses=[bad],
                            note="(0, v) singular limit along (x, ybar); condition not certified")
    sec = estimate_at_infinity(section(phi, ybar), plan)
    lim = inclusion_certificate(sec.limiting, project_first(full.limiting, n))
    sing = inclusion_certificate(sec.singular, project_first(full.singular, n))
    trace += [{"limiting": lim.to_dict()}, {"singular": sing.to_dict()}]
    if lim.holds and sing.holds:
        return holds(min(lim.margin, sing.margin), trace=trace)
    return inconclusive(trace=trace, note="projected inclusion not confirmed")


# ---------------------------------------------------------------------------
# chain rule
# ---------------------------------------------------------------------------

def coercivity_check(gs, plan: SamplingPlan):
    """min ||g(x)|| on the two outermost sampling spheres, locally refined.

    Returns (coercive flag, minimal values, minimiser).
    """
    m = gs[0].dim
    tau = plan.divergence_threshold
    mins, best_x = [], None
    for r in plan.radii()[-2:]:
        D = spiral_directions(m, max(plan.dirs_per_level, 8), plan.seed) if m > 1 else np.array([[-1.0], [1.0]])
        D = np.vstack([D, np.eye(m), -np.eye(m)])

        def gnorm(X):
            with np.errstate(all="ignore"):
                V = np.column_stack([E.eval_batch(g, X) for g in gs])
            v = np.linalg.norm(V, axis=1)
            return np.where(np.isfinite(v), v, np.inf)

        vals = gnorm(r * D)
        order = np.argsort(vals)[:5]
        best, bx = float(vals[order[0]]), r * D[order[0]]
        if m > 1:
            for i in order:
                res = minimize(lambda z: float(gnorm((r * z / max(np.linalg.norm(z), 1e-300))[None, :])[0]),
                               D[i], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12})
                z = r * res.x / np.linalg.norm(res.x)
                v = float(gnorm(z[None, :])[0])
                if v < best:
                    best, bx = v, z
        mins.append(best)
        if best_x is None or best < min(mins[:-1], default=np.inf):
            best_x = bx
    coercive = all(v > tau * plan.r0 for v in mins)
    return coercive, mins, best_x


def _sum_scaled(estimates, weights, n) -> LimitSet:
    out = LimitSet.from_points(np.zeros((1, n)), n)
    for est, w in zip(estimates, weights):
        out = minkowski_sum(out, _scale_any(est, abs(float(w))))
    return out


def _sample_set(A: LimitSet, ts=(0.5, 1.0, 2.0)) -> np.ndarray:
    """Finite sample of A: its points and a few points along each ray."""
    pts = [A.points]
    for r, a in zip(A.rays, A.anchors):
        base = np.zeros(A.dim) if a < 0 else A.points[a]
        pts.append(base + np.asarray(ts)[:, None] * r)
    return np.vstack(pts) if pts else np.zeros((0, A.dim))


def chain_rule_at_infinity(f: E.FunctionSpec, gs, plan: SamplingPlan | None = None):
    """Bound for d(f o g)(inf) from d f(inf) and the pieces d((sign u_i) g_i)(inf)."""
    plan = plan or SamplingPlan()
    gs = list(gs)
    if len(gs) != f.dim:
        raise ValueError(f"f takes {f.dim} arguments, got {len(gs)} inner maps")
    m = gs[0].dim
    h = E.compose(f, gs)
    for i, g in enumerate(gs):
        rep = lipschitz_at_infinity(g, plan)
        if not rep.verdict.holds:
            raise NotLipschitzAtInfinity(f"inner map {i + 1} is not Lipschitz at infinity")
    coercive, mins, xw = coercivity_check(gs, plan)
    if not coercive:
        direct = estimate_at_infinity(h, plan).limiting
        raise CoercivityFailed(f"inner map not coercive (min |g| = {min(mins):.3g})", direct, xw)
    ef = estimate_at_infinity(f, plan)
    pos = [estimate_at_infinity(g, plan).limiting for g in gs]
    neg = [estimate_at_infinity(E.negate(g), plan).limiting for g in gs]

    def combo(u):
        pieces = [pos[i] if u[i] >= 0 else neg[i] for i in range(len(u))]
        return _sum_scaled(pieces, u, m)

    # qualification: no nonzero singular u with 0 in sum |u_i| d((sign u_i) g_i)(inf)
    for u in ef.singular.nonzero_rays():
        d = min_norm(combo(u))
        if d <= HAUSDORFF_TOL:
            cert = fails(HAUSDORFF_TOL - d if d < HAUSDORFF_TOL else HAUSDORFF_TOL, witnesses=[u])
            raise QualificationFailed("chain-rule qualification fails", QualificationReport(CHAIN_COERCIVE, cert, u))
    bound = LimitSet.empty(m)
    for u in _sample_set(ef.limiting):
        bound = union(bound, combo(u))
    sing_dirs = []
    for u in ef.singular.nonzero_rays():
        sing_dirs += list(safe_normalize(_sample_set(combo(u))))
    sing_bound = LimitSet.cone(np.array(sing_dirs), m) if sing_dirs else LimitSet.zero_cone(m)
    eh = estimate_at_infinity(h, plan)
    lim = inclusion_certificate(eh.limiting, bound)
    sing = inclusion_certificate(eh.singular, sing_bound)
    trace = [{"coercivity_minima": mins}, {"limiting": lim.to_dict()}, {"singular": sing.to_dict()}]
    if lim.holds and sing.holds:
        cert = holds(min(lim.margin, sing.margin), trace=trace)
    else:
        cert = inconclusive(trace=trace, note="direct estimate leaves the chain-rule bound")
    return bound, cert


# ---------------------------------------------------------------------------
# constraint qualification at infinity
# ---------------------------------------------------------------------------

def _check_constraint_set(gs, hs, n):
    forms = [E.affine_form(g.root, n) for g in gs] + [E.affine_form(h.root, n) for h in hs]
    if all(f is not None for f in forms):
        A = [c for c, d in forms[:len(gs)]]
        b = [-d for c, d in forms[:len(gs)]]
        for c, d in forms[len(gs):]:
            A += [c, -c]
            b += [-d, d]
        A, b = np.array(A).reshape(-1, n), np.array(b)
        if not len(A):
            return
        if not is_feasible(A, b):
            raise EmptyOrBoundedConstraintSet("constraint set is empty")
        if not polyhedron_unbounded(A, b):
            raise EmptyOrBoundedConstraintSet("constraint set is bounded")
        return
    S = S_.constraint_system(gs, hs, n)
    X = 1e3 * spiral_directions(n, 64) if n > 1 else np.array([[-1e3], [1e3]])
    Y, d = S_.project_batch(S, X)
    ok = np.isfinite(d)
    if not ok.any():
        raise EmptyOrBoundedConstraintSet("no point of the constraint set found")
    if np.linalg.norm(Y[ok], axis=1).max() < 100.0:
        raise EmptyOrBoundedConstraintSet("constraint set looks bounded")


def constraint_cone_bound(gs, hs, plan: SamplingPlan | None = None):
    """(pos-hull bound on N_Omega(inf), qualification report for 0 not in co{...})."""
    plan = plan or SamplingPlan()
    gs, hs = list(gs), list(hs)
    fs = gs + hs
    if not fs:
        raise ValueError("no constraints given")
    n = fs[0].dim
    for f in fs:
        if not lipschitz_at_infinity(f, plan).verdict.holds:
            raise NotLipschitzAtInfinity(f"{f} is not Lipschitz at infinity")
    _check_constraint_set(gs, hs, n)
    gens = [estimate_at_infinity(g, plan).limiting.points for g in gs]
    for h in hs:
        gens.append(estimate_at_infinity(h, plan).limiting.points)
        gens.append(estimate_at_infinity(E.negate(h), plan).limiting.points)
    P = np.vstack(gens)
    x, w = min_norm_hull(P)
    dist = float(np.linalg.norm(x))
    trace = [{"generators": P, "nearest_point": x, "weights": w}]
    if dist <= HAUSDORFF_TOL:
        cert = fails(HAUSDORFF_TOL - dist if dist < HAUSDORFF_TOL else HAUSDORFF_TOL,
                     witnesses=[w], trace=trace, note="0 lies in the convex hull")
        return None, QualificationReport(CONSTRAINT_AT_INFINITY, cert, w, dist)
    bound = LimitSet.cone(safe_normalize(P), n, convex=True)
    S = S_.constraint_system(gs, hs, n)
    try:
        N = estimate_normal_cone(S, tuple(range(n)), plan).cone
        check = inclusion_certificate(N, bound)
        trace.append({"normal_cone": N.to_dict(), "inclusion": check.to_dict()})
        ok = check.holds
    except UnboundedProjectionRequired as exc:
        trace.append({"normal_cone": str(exc)})
        ok = False
    cert = holds(dist, trace=trace) if ok else inconclusive(trace=trace, margin=dist,
                                                            note="sampled normal cone leaves the bound")
    return bound, QualificationReport(CONSTRAINT_AT_INFINITY, cert, None, dist)
