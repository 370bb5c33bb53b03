"""Limiting and singular subdifferentials at infinity.

Two independent estimators: outer limits of pointwise subgradients along escaping
samples, and slices of the epigraph's normal cone at infinity.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import expr as E
from . import sets as S_
from .certificate import Certificate, holds, inconclusive, fails
from .cones import estimate_normal_cone
from .errors import DomainBoundedError
from .limitset import LimitSet, SamplingPlan, cluster, safe_normalize, truncated_hausdorff
from .pointwise import _indicator_region, _split_terms, subgradients_batch
from .sets import _norm
from .sampling import escape_samples, group_keys, persistent_directions, record_level

HAUSDORFF_TOL = 0.05
MIN_CHAIN = 4


@dataclass
class InfinityEstimate:
    limiting: LimitSet
    singular: LimitSet
    escaping_rays: np.ndarray
    pointwise_singular_rays: np.ndarray
    trace: list
    plan: SamplingPlan
    baseline: float = 1.0
    inconclusive: bool = False

    def to_dict(self) -> dict:
        return {"limiting": self.limiting.to_dict(), "singular": self.singular.to_dict(),
                "plan": self.plan.to_dict(), "trace": self.trace}


# ---------------------------------------------------------------------------
# affine rays
# ---------------------------------------------------------------------------

def affine_chains(points: np.ndarray, rays: np.ndarray, tol: float, tau: float):
    """Replace runs of points marching along a ray by an anchored ray.

    A run starts at an anchor a, continues through points a + t_j d whose
    consecutive gaps are at most max(1, 3 ||a + t_j d||), has at least MIN_CHAIN points, and
    reaches t >= tau/2 * max(1, ||a||). Values beyond tau times the baseline count as escaping,
    so a ladder of bounded values cannot reach much further. Returns (points, rays, anchors).
    """
    n = points.shape[1] if points.ndim == 2 else rays.shape[1]
    P = np.asarray(points, float).reshape(-1, n)
    used = np.zeros(len(P), bool)
    out_rays, out_anchor = [], []
    for d in np.asarray(rays, float).reshape(-1, n):
        for i in np.lexsort(P.T[::-1]) if len(P) else []:
            if used[i]:
                continue
            a = P[i]
            W = P - a
            t = W @ d
            perp = np.linalg.norm(W - t[:, None] * d, axis=1)
            on = (perp <= tol * np.maximum(1.0, np.abs(t))) & ~used  # angular tolerance along the line
            if np.any(on & (t < -tol)):
                continue  # not the first point of its line
            idx = np.flatnonzero(on & (t > tol))
            idx = idx[np.argsort(t[idx])]
            chain, last = [i], 0.0
            for j in idx:
                if t[j] - last <= max(1.0, 3.0 * float(np.linalg.norm(a + last * d))):
                    chain.append(j)
                    last = t[j]
                else:
                    break
            if len(chain) >= MIN_CHAIN and last >= 0.5 * tau * max(1.0, np.linalg.norm(a)):
                used[chain[1:]] = True
                out_rays.append(d)
                out_anchor.append(a)
    keep = P[~used]
    return keep, np.array(out_rays).reshape(-1, n), np.array(out_anchor).reshape(-1, n)


def _assemble(points, singular_dirs, cone_rays, n, plan) -> LimitSet:
    """Limiting estimate: persistent points, affine rays along singular directions, conic parts."""
    P = np.asarray(points).reshape(-1, n)
    pts, ar, an = affine_chains(P, singular_dirs, plan.cluster_tol, plan.divergence_threshold)
    all_pts = list(pts) + list(an)
    rays, anchors = [], []
    for d, a in zip(ar, an):
        rays.append(d)
        anchors.append(int(np.argmin(np.linalg.norm(np.array(all_pts) - a, axis=1))))
    for d in np.asarray(cone_rays).reshape(-1, n):
        # conic parts hang off the point they were observed with; the origin otherwise
        base = -1
        if len(all_pts) == 1:
            base = 0 if np.linalg.norm(all_pts[0]) > 1e-12 else -1
        rays.append(d)
        anchors.append(base)
    if not all_pts and not rays:
        return LimitSet.empty(n)
    if rays and not all_pts:
        all_pts = [np.zeros(n)]
    if any(a == -1 for a in anchors) and not any(np.linalg.norm(p) <= 1e-12 for p in all_pts):
        all_pts.append(np.zeros(n))
    return LimitSet(n, np.array(all_pts).reshape(-1, n), np.array(rays).reshape(-1, n), tuple(anchors))


# ---------------------------------------------------------------------------
# sampling route
# ---------------------------------------------------------------------------

def _snap_regions(f: E.FunctionSpec):
    """Sets of top-level indicator terms; samples are also snapped onto them."""
    out = []
    for t in _split_terms(f.root):
        r = _indicator_region(t)
        if r is None:
            continue
        if isinstance(r, E.GuardRegion):
            A = np.array([q.coeffs for q in r.ineqs])
            b = -np.array([q.const for q in r.ineqs])
            out.append(S_.polyhedron(A, b))
        else:
            out.append(r)
    return out


def _level_samples(f, r, plan, regions, group_plan=None):
    n = f.dim
    smp = escape_samples(n, tuple(range(n)), r, plan, group_plan=group_plan)
    X, G = smp.X, smp.group
    for S in regions:
        Y, d = S_.project_batch(S, smp.X, cap=np.linalg.norm(smp.X, axis=1) / 2.0)
        ok = np.all(np.isfinite(Y), axis=1) & (d > 0)
        X = np.vstack([X, Y[ok]])
        G = np.concatenate([G, smp.group[ok]])
    return X, G


_CACHE: dict = {}


def _cache_key(f, plan):
    try:
        return hash((f, plan)), (f, plan)
    except TypeError:
        return None, None


def estimate_at_infinity(f: E.FunctionSpec, plan: SamplingPlan | None = None) -> InfinityEstimate:
    """Both subdifferentials at infinity from escaping pointwise subgradients."""
    plan = plan or SamplingPlan()
    h, key = _cache_key(f, plan)
    if h is not None and h in _CACHE and _CACHE[h][0] == key:
        return _CACHE[h][1]
    est = _estimate(f, plan)
    if h is not None:
        if len(_CACHE) > 256:
            _CACHE.clear()
        _CACHE[h] = (key, est)
    return est


def _estimate(f, plan):
    n = f.dim
    tau = plan.divergence_threshold
    n_groups = len(group_keys(n, tuple(range(n)), plan))
    regions = _snap_regions(f)
    rec_pts, rec_esc, rec_sing, rec_cone, trace = [], [], [], [], []
    baseline = None
    resampled = False
    for k, r in enumerate(plan.radii()):
        X, G = _level_samples(f, float(r), plan, regions)
        rv, V, rr, R, rs, Sg, in_dom = subgradients_batch(f, X)
        if not in_dom.any() and not resampled:
            resampled = True
            denser = replace(plan, dirs_per_level=4 * plan.dirs_per_level)
            X, G = _level_samples(f, float(r), denser, regions, group_plan=plan)
            rv, V, rr, R, rs, Sg, in_dom = subgradients_batch(f, X)
        norms = _norm(V, axis=1) if len(V) else np.zeros(0)
        if baseline is None and len(V):
            finite = norms[np.isfinite(norms)]
            baseline = max(1.0, float(np.median(finite))) if len(finite) else 1.0
        thr = tau * (baseline or 1.0)
        esc = ~(norms < thr)
        gv = G[rv] if len(rv) else np.zeros(0, int)
        skip = np.setdiff1d(np.arange(n_groups), np.unique(G[in_dom]))
        rec_pts.append(record_level(float(r), gv, V, ~esc, skip, n_groups))
        U = safe_normalize(V) if len(V) else V
        rec_esc.append(record_level(float(r), gv, U, esc, skip, n_groups))
        gs = G[rs] if len(rs) else np.zeros(0, int)
        rec_sing.append(record_level(float(r), gs, Sg, np.ones(len(rs), bool), skip, n_groups))
        gc = G[rr] if len(rr) else np.zeros(0, int)
        rec_cone.append(record_level(float(r), gc, R, np.ones(len(rr), bool), skip, n_groups))
        trace.append({"radius": float(r), "samples": int(len(X)), "in_domain": int(in_dom.sum()),
                      "bounded_values": int((~esc).sum()), "escaping_values": int(esc.sum()),
                      "singular_samples": int(len(rs)), "threshold": float(thr),
                      "max_bounded_norm": float(norms[~esc].max()) if (~esc).any() else 0.0})
    if all(t["in_domain"] == 0 for t in trace):
        raise DomainBoundedError("no sample landed in dom f at any radius")
    points, _ = persistent_directions(rec_pts, plan, n, unit=False)
    esc_rays, _ = persistent_directions(rec_esc, plan, n, unit=True)
    pw_rays, _ = persistent_directions(rec_sing, plan, n, unit=True)
    cone_rays, _ = persistent_directions(rec_cone, plan, n, unit=True)
    sing_all = np.vstack([esc_rays, pw_rays])
    if len(sing_all):
        sing_all, _ = cluster(sing_all, plan.cluster_tol, unit=True)
    limiting = _assemble(points, sing_all, cone_rays, n, plan)
    singular = LimitSet.cone(sing_all, n) if len(sing_all) else LimitSet.zero_cone(n)
    m = plan.stability_window
    incon = any(t["in_domain"] == 0 for t in trace[-m:])
    return InfinityEstimate(limiting, singular, esc_rays, pw_rays, trace, plan, baseline or 1.0, incon)


def estimate_subdiff_at_infinity(f: E.FunctionSpec, plan: SamplingPlan | None = None) -> LimitSet:
    return estimate_at_infinity(f, plan).limiting


def estimate_singular_at_infinity(f: E.FunctionSpec, plan: SamplingPlan | None = None) -> LimitSet:
    return estimate_at_infinity(f, plan).singular


# ---------------------------------------------------------------------------
# epigraph route
# ---------------------------------------------------------------------------

def slice_epigraph_cone(N: LimitSet, plan: SamplingPlan):
    """{u : (u,-1) in N} and {u : (u,0) in N} from a union-of-rays cone in R^{n+1}."""
    n = N.dim - 1
    R = N.nonzero_rays()
    tol = plan.cluster_tol
    pts = [r[:n] / -r[n] for r in R if r[n] < -tol]
    sing = [safe_normalize(r[:n])[0] for r in R if abs(r[n]) <= tol and np.linalg.norm(r[:n]) > 0]
    P = np.array(pts).reshape(-1, n)
    Sg = np.array(sing).reshape(-1, n)
    if len(Sg):
        Sg, _ = cluster(Sg, tol, unit=True)
    limiting = _assemble(P, Sg, np.zeros((0, n)), n, plan) if len(P) else LimitSet.empty(n)
    singular = LimitSet.cone(Sg, n) if len(Sg) else LimitSet.zero_cone(n)
    return limiting, singular


def subdiff_at_infinity_via_epigraph(f: E.FunctionSpec, plan: SamplingPlan | None = None):
    """(limiting, singular) from the normal cone to epi f at infinity along the x coordinates."""
    plan = plan or SamplingPlan()
    epi = S_.epigraph(f)
    try:
        est = estimate_normal_cone(epi, tuple(range(f.dim)), plan)
    except Exception as exc:
        from .errors import UnboundedProjectionRequired
        if isinstance(exc, UnboundedProjectionRequired):
            raise DomainBoundedError(str(exc)) from exc
        raise
    return slice_epigraph_cone(est.cone, plan)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

def check_nonemptiness(f: E.FunctionSpec, plan: SamplingPlan | None = None) -> Certificate:
    """At least one of the limiting set and the nonzero singular rays is nonempty."""
    plan = plan or SamplingPlan()
    est = estimate_at_infinity(f, plan)
    trace = [{"limiting": est.limiting.to_dict(), "singular": est.singular.to_dict()}]
    if not est.limiting.is_empty():
        w = est.limiting.points[0] if len(est.limiting.points) else est.limiting.rays[0]
        return holds(1.0, witnesses=[w], trace=trace, note="limiting set nonempty")
    if len(est.singular.nonzero_rays()):
        return holds(1.0, witnesses=[est.singular.nonzero_rays()[0]], trace=trace, note="singular ray")
    trace.append({"suggestion": plan.refined().to_dict()})
    return inconclusive(trace=trace, note="empty estimate; refine the sampling plan")


def check_scaling_identities(f: E.FunctionSpec, lam: float, plan: SamplingPlan | None = None) -> Certificate:
    """Limiting set scales by lam, singular cone is unchanged."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    plan = plan or SamplingPlan()
    a = estimate_at_infinity(f, plan)
    b = estimate_at_infinity(E.scale(f, lam), plan)
    d_lim = truncated_hausdorff(b.limiting, a.limiting.scaled(lam))
    d_sing = truncated_hausdorff(b.singular, a.singular)
    worst = max(d_lim, d_sing)
    trace = [{"limiting_distance": d_lim, "singular_distance": d_sing}]
    if worst <= HAUSDORFF_TOL:
        return holds(HAUSDORFF_TOL - worst if worst < HAUSDORFF_TOL else HAUSDORFF_TOL, trace=trace)
    return fails(worst - HAUSDORFF_TOL, trace=trace, witnesses=[])


def infinity_report(f: E.FunctionSpec, plan: SamplingPlan | None = None) -> dict:
    return estimate_at_infinity(f, plan).to_dict()
