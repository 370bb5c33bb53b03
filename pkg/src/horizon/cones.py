"""Normal cones at infinity: estimation, boundary escape, intersection and product rules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as E
from . import sets as S_
from .certificate import Certificate, fails, holds, inconclusive
from .errors import EmptyIntersection, InconclusiveSampling, UnboundedProjectionRequired
from .polyhedral import recession_unbounded_coords
from .limitset import (LimitSet, SamplingPlan, directed_excess, minkowski_sum, safe_normalize,
                       to_union_form)
from .sampling import escape_samples, group_keys, persistent_directions, record_level
from .sets import SetSpec

HAUSDORFF_TOL = 0.05
SATURATED = 0.5 * np.finfo(float).max  # evaluation saturates here on overflow


def index_set(I, dim: int) -> tuple:
    """Validate a 1-based index set and return it 0-based and sorted."""
    idx = sorted({int(i) for i in I})
    if not idx:
        raise ValueError("index set must be nonempty")
    if idx[0] < 1 or idx[-1] > dim:
        raise ValueError(f"index set {idx} out of range 1..{dim}")
    return tuple(i - 1 for i in idx)


@dataclass
class ConeEstimate:
    cone: LimitSet
    records: list
    trace: list
    boundary: np.ndarray  # boundary points found at the last level
    route: str
    plan: SamplingPlan

    def trace_dict(self) -> list:
        return self.trace


def _generators(S: SetSpec, Y: np.ndarray, tol: float = 1e-7):
    """Pointwise normal generators at boundary points: list of (row index, unit vector)."""
    m, n = Y.shape
    rows, vecs = [], []
    if S.kind in ("halfspace", "polyhedron"):
        nr = np.linalg.norm(S.A, axis=1)
        res = (Y @ S.A.T - S.b) / nr
        act = np.abs(res) <= tol * (1 + np.abs(Y).max(axis=1))[:, None]
        for k in range(S.A.shape[0]):
            idx = np.flatnonzero(act[:, k])
            rows.append(idx)
            vecs.append(np.repeat((S.A[k] / nr[k])[None, :], len(idx), axis=0))
    elif S.kind == "ball":
        rows.append(np.arange(m))
        vecs.append(safe_normalize(Y - S.center))
    elif S.kind == "constraints":
        scale = 1 + np.abs(Y).max(axis=1)
        for gi in S.g:
            v, G, dom, kink = E.grad_batch(gi, Y)
            gn = np.linalg.norm(safe_normalize(G), axis=1)
            with np.errstate(over="ignore"):
                act = (np.abs(v) <= tol * scale * (1 + np.abs(G).max(axis=1))) & (gn > 0) & ~kink
            idx = np.flatnonzero(act)
            rows.append(idx)
            vecs.append(safe_normalize(G[idx]))
        for hj in S.h:
            v, G, dom, kink = E.grad_batch(hj, Y)
            ok = ~kink & np.all(np.isfinite(G), axis=1) & (np.abs(G).max(axis=1) > 0)
            idx = np.flatnonzero(ok)
            U = safe_normalize(G[idx])
            rows += [idx, idx]
            vecs += [U, -U]
    if rows:
        r = np.concatenate(rows)
        V = np.vstack(vecs) if len(r) else np.zeros((0, n))
    else:
        r, V = np.zeros(0, int), np.zeros((0, n))
    return r, V


def _with_combinations(r, V, weights=(0.25, 0.5, 0.75)):
    """Add pairwise conic combinations of generators sharing a row."""
    if len(r) < 2:
        return r, V
    order = np.argsort(r, kind="stable")
    r, V = r[order], V[order]
    extra_r, extra_v = [], []
    bounds = np.flatnonzero(np.diff(r)) + 1
    for chunk_r, chunk_v in zip(np.split(r, bounds), np.split(V, bounds)):
        k = len(chunk_v)
        if k < 2:
            continue
        for a in range(k):
            for b in range(a + 1, k):
                for w in weights:
                    v = w * chunk_v[a] + (1 - w) * chunk_v[b]
                    if np.linalg.norm(v) > 1e-9:
                        extra_r.append(chunk_r[0])
                        extra_v.append(v / np.linalg.norm(v))
    if extra_r:
        r = np.concatenate([r, extra_r])
        V = np.vstack([V, extra_v])
    return r, V


def _check_projected_unbounded(S: SetSpec, I):
    b = S.is_bounded()
    if b is True:
        raise UnboundedProjectionRequired(f"{S} is bounded, so its projection onto I is bounded")
    if S.kind in ("halfspace", "polyhedron"):
        if not recession_unbounded_coords(S.A, S.b, I):
            raise UnboundedProjectionRequired("projection of the polyhedron onto I is bounded")


def estimate_normal_cone(S: SetSpec, I, plan: SamplingPlan | None = None,
                         route: str = "projection", _retry: bool = True) -> ConeEstimate:
    """Estimate N_S at infinity along coordinates I (0-based tuple).

    route 'projection' collects unit directions of x - proj(x) for samples with
    dist(x, S) <= ||pi(x)||/2; route 'pointwise' collects pointwise normals at
    the boundary points reached by those projections.
    """
    plan = plan or SamplingPlan()
    I = tuple(sorted(I))
    n = S.dim
    _check_projected_unbounded(S, I)
    n_groups = len(group_keys(n, I, plan))
    records, trace = [], []
    boundary = np.zeros((0, n))
    reached = []
    for r in plan.radii():
        smp = escape_samples(n, I, float(r), plan, anchor=S.anchor)
        X = smp.X
        cap = smp.pi_norm / 2.0
        with np.errstate(all="ignore"):
            viol = S.violation(X)
        overflow = ~(np.abs(viol) < SATURATED)
        Y, d = S_.project_batch(S, X, cap=cap)
        admissible = np.isfinite(d)
        inside = admissible & (d == 0)
        off = admissible & (d > 0)
        reached.append(bool(admissible.any()))
        if route == "projection":
            U = np.zeros_like(X)
            U[off] = safe_normalize(X[off] - Y[off])
            rec = record_level(float(r), smp.group, U, off, smp.group[overflow & ~off], n_groups)
        elif route == "pointwise":
            idx = np.flatnonzero(off)
            rr, V = _generators(S, Y[idx])
            rr, V = _with_combinations(rr, V)
            prox = safe_normalize(X[idx] - Y[idx])
            rows = np.concatenate([rr, np.arange(len(idx))])
            V = np.vstack([V, prox]) if len(V) else prox
            grp = smp.group[idx][rows] if len(rows) else np.zeros(0, int)
            valid = np.ones(len(rows), bool)
            rec = record_level(float(r), grp, V, valid, smp.group[overflow & ~off], n_groups)
        else:
            raise ValueError(f"unknown route {route!r}")
        records.append(rec)
        boundary = Y[off]
        trace.append({"radius": float(r), "samples": int(len(X)), "admissible": int(admissible.sum()),
                      "inside": int(inside.sum()), "off_set": int(off.sum()),
                      "overflow": int(overflow.sum()),
                      "groups_ok": int(sum(1 for v in rec.status.values() if v == "ok"))})
    m = plan.stability_window
    if not any(reached[-m:]):
        raise UnboundedProjectionRequired("no points of the set found at the largest radii")
    rays, summary = persistent_directions(records, plan, n)
    cone = LimitSet.cone(rays, n) if len(rays) else LimitSet.zero_cone(n)
    cone.meta = {"route": route, "persistent": len(summary)}
    if cone.is_zero() and len(boundary):
        if _retry:
            return estimate_normal_cone(S, I, plan.refined(), route, _retry=False)
        raise InconclusiveSampling("boundary points escape but no direction stabilized", trace=trace)
    return ConeEstimate(cone, records, trace, boundary, route, plan)


def normal_cone_at_infinity(S: SetSpec, I, plan: SamplingPlan | None = None,
                            route: str = "projection") -> LimitSet:
    """N_S(inf_I) as a union of rays; I is a 1-based index set."""
    return estimate_normal_cone(S, index_set(I, S.dim), plan, route).cone


def boundary_escape(S: SetSpec, I, plan: SamplingPlan | None = None) -> Certificate:
    """Decide whether the projection of the boundary onto I is unbounded."""
    plan = plan or SamplingPlan()
    I0 = index_set(I, S.dim)
    _check_projected_unbounded(S, I0)
    r_last = float(plan.radii()[-1])
    smp = escape_samples(S.dim, I0, 2.0 * r_last, plan, anchor=S.anchor)
    Y, d = S_.project_batch(S, smp.X, cap=smp.pi_norm / 2.0)
    off = np.isfinite(d) & (d > 0)
    pi_y = np.linalg.norm(Y[off][:, list(I0)], axis=1) if off.any() else np.zeros(0)
    found = pi_y >= r_last
    est = estimate_normal_cone(S, I0, plan)
    nonzero = not est.cone.is_zero()
    trace = [{"radius": 2.0 * r_last, "boundary_points": int(found.sum()), "cone_nonzero": nonzero}]
    if found.any() and nonzero:
        k = int(np.argmax(pi_y))
        return holds(float(pi_y[k] / r_last), witnesses=[Y[off][k]], trace=trace)
    if not found.any() and not nonzero:
        return fails(1.0, trace=trace, note="no boundary points beyond the last radius")
    return inconclusive(trace=trace, witnesses=list(Y[off][found][:3]),
                        note="boundary search and cone estimate disagree")


# ---------------------------------------------------------------------------
# intersections and products
# ---------------------------------------------------------------------------

def _as_constraints(S: SetSpec):
    """(g list, h list) describing S as a constraint system."""
    n = S.dim
    if S.kind == "constraints":
        return list(S.g), list(S.h)
    if S.kind == "whole":
        return [], []
    if S.kind in ("halfspace", "polyhedron"):
        gs = []
        for a, b in zip(S.A, S.b):
            f = E.linear(a)
            gs.append(E.make_function(E.Node("sub", (f.root, E.const(b))), n, validate=False))
        return gs, []
    if S.kind == "ball":
        c = S.center
        node = E.Node("norm", tuple(E.Node("sub", (E.var(i), E.const(c[i]))) for i in range(n)))
        return [E.make_function(E.Node("sub", (node, E.const(S.radius))), n, validate=False)], []
    if S.kind == "product":
        gs, hs, k = [], [], 0
        for p in S.parts:
            g, h = _as_constraints(p)
            gs += [E.embed(f, n, k) for f in g]
            hs += [E.embed(f, n, k) for f in h]
            k += p.dim
        return gs, hs
    raise ValueError(S.kind)


def intersect(S1: SetSpec, S2: SetSpec) -> SetSpec:
    if S1.dim != S2.dim:
        raise ValueError("dimension mismatch")
    if S1.kind in ("halfspace", "polyhedron") and S2.kind in ("halfspace", "polyhedron"):
        return S_.polyhedron(np.vstack([S1.A, S2.A]), np.concatenate([S1.b, S2.b]))
    g1, h1 = _as_constraints(S1)
    g2, h2 = _as_constraints(S2)
    return S_.constraint_system(g1 + g2, h1 + h2, dim=S1.dim, text=f"({S1}) & ({S2})")


def find_common_point(S1: SetSpec, S2: SetSpec, box: float = 20.0, iters: int = 200,
                      tol: float = S_.MEMBER_TOL):
    """Alternating projections from a grid of starts; returns a point of both sets in the box or None.

    Only points inside the box count, so sets that approach each other only
    asymptotically (x2 >= e^x1 against x2 <= -e^x1) are reported disjoint.
    """
    n = S1.dim
    g = np.linspace(-box, box, 5)
    starts = np.array(np.meshgrid(*[g] * n)).reshape(n, -1).T if n <= 4 else \
        np.vstack([np.zeros(n), box * np.eye(n), -box * np.eye(n)])
    X = starts.copy()
    history = []
    for _ in range(iters):
        Y1, d1 = S_.project_batch(S1, X)
        Y1 = np.where(np.isfinite(Y1), Y1, X)
        Y2, d2 = S_.project_batch(S2, Y1)
        X = np.where(np.isfinite(Y2), Y2, Y1)
        for Z in (X, Y1):
            # absolute tolerance: a scaled one would accept asymptotically touching sets
            both = (S1.violation(Z) <= tol) & (S2.violation(Z) <= tol) & (np.abs(Z).max(axis=1) <= box)
            if both.any():
                return Z[np.argmax(both)]
        sc = 1 + np.abs(X).max(axis=1)
        history.append(float(np.min(np.maximum(S1.violation(X), S2.violation(X)) / sc)))
        if len(history) > 20 and history[-1] > 0.1 * history[-21]:
            break  # sublinear progress: the sets do not meet inside the box
    return None


def _angular_overlap(A: LimitSet, B: LimitSet):
    """Smallest distance between a ray of A and a ray of -B, with the pair."""
    Ra, Rb = A.nonzero_rays(), B.nonzero_rays()
    if not len(Ra) or not len(Rb):
        return np.inf, None
    D = np.linalg.norm(Ra[:, None, :] + Rb[None, :, :], axis=2)
    i, j = np.unravel_index(np.argmin(D), D.shape)
    return float(D[i, j]), Ra[i]


def check_intersection_rule(S1: SetSpec, S2: SetSpec, I, plan: SamplingPlan | None = None) -> Certificate:
    """Normal qualification at infinity for S1 and S2, then the intersection inclusion."""
    plan = plan or SamplingPlan()
    I0 = index_set(I, S1.dim)
    if find_common_point(S1, S2) is None:
        raise EmptyIntersection(f"no common point of {S1} and {S2} found")
    S12 = intersect(S1, S2)
    N1 = estimate_normal_cone(S1, I0, plan).cone
    N2 = estimate_normal_cone(S2, I0, plan).cone
    gap, witness = _angular_overlap(N1, N2)
    delta = plan.cluster_tol
    trace = [{"N1": N1.to_dict(), "N2": N2.to_dict(), "min_gap": gap}]
    if gap <= delta:
        return fails(delta - gap if gap < delta else delta, witnesses=[witness], trace=trace,
                     note="qualification fails")
    N12 = estimate_normal_cone(S12, I0, plan).cone
    total = to_union_form(minkowski_sum(N1, N2))
    excess = directed_excess(N12, total)
    trace.append({"N12": N12.to_dict(), "excess": excess})
    margin = min(gap - delta, 1.0) if np.isfinite(gap) else 1.0
    if excess <= HAUSDORFF_TOL:
        return holds(margin, trace=trace, note="qualification holds; inclusion holds")
    return inconclusive(trace=trace, note="qualification holds but sampled inclusion is violated")


def product_cone(S1: SetSpec, I1, S2: SetSpec, I2, plan: SamplingPlan | None = None):
    """(product of cones, direct estimate on S1 x S2, inclusion certificate)."""
    plan = plan or SamplingPlan()
    a = index_set(I1, S1.dim)
    b = index_set(I2, S2.dim)
    N1 = estimate_normal_cone(S1, a, plan).cone
    N2 = estimate_normal_cone(S2, b, plan).cone
    prod = S_.product_limitset(N1, N2)
    P = S_.product(S1, S2)
    I = a + tuple(S1.dim + i for i in b)
    direct = estimate_normal_cone(P, I, plan).cone
    fwd = directed_excess(prod, direct)
    back = directed_excess(direct, prod)
    strict = back > HAUSDORFF_TOL
    trace = [{"product_in_direct": fwd, "direct_in_product": back, "strict": bool(strict)}]
    if fwd <= HAUSDORFF_TOL:
        cert = holds(HAUSDORFF_TOL - fwd if fwd < HAUSDORFF_TOL else HAUSDORFF_TOL, trace=trace,
                     note="strict inclusion" if strict else "equality")
    else:
        cert = inconclusive(trace=trace, note="product cone not contained in direct estimate")
    return prod, direct, cert
