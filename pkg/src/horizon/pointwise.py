"""Pointwise limiting and singular subdifferentials."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as E
from .errors import BothNonLipschitz, NotInSet, UnsupportedClass
from .limitset import LimitSet, cluster, minkowski_sum, safe_normalize, spiral_directions

KINK_TOL = 1e-7
BLOWUP_RATIO = 10.0
BLOWUP_MIN = 1e3


@dataclass
class SubgradientSample:
    """Subgradients at one point.

    values are extreme points of the bounded part; rays generate the conic part
    contributed by normal cones; convex marks that the set is co(values) + cone(rays).
    """
    location: np.ndarray
    values: np.ndarray
    singular_dirs: np.ndarray
    f_value: float
    level: int = 0
    rays: np.ndarray = None
    convex: bool = False
    method: str = "gradient"

    def __post_init__(self):
        n = len(self.location)
        self.values = np.asarray(self.values, float).reshape(-1, n)
        self.singular_dirs = np.asarray(self.singular_dirs, float).reshape(-1, n)
        self.rays = np.zeros((0, n)) if self.rays is None else np.asarray(self.rays, float).reshape(-1, n)

    def as_limitset(self) -> LimitSet:
        n = len(self.location)
        P = LimitSet.from_points(self.values, n, convex=self.convex)
        if not len(self.rays):
            return P
        return minkowski_sum(P, LimitSet.cone(self.rays, n, convex=self.convex))

    def singular_cone(self) -> LimitSet:
        n = len(self.location)
        if not len(self.singular_dirs):
            return LimitSet.zero_cone(n)
        return LimitSet.cone(self.singular_dirs, n, convex=self.convex and not len(self.singular_dirs) > len(self.rays))

    def to_dict(self) -> dict:
        d = self.as_limitset().to_dict()
        d["location"] = self.location.tolist()
        d["singular"] = self.singular_cone().to_dict()
        d["f_value"] = float(self.f_value) if np.isfinite(self.f_value) else "inf"
        return d


# ---------------------------------------------------------------------------
# structural helpers
# ---------------------------------------------------------------------------

def _split_terms(node: E.Node):
    """Top-level additive terms (subtraction becomes negation)."""
    if node.op == "add":
        return _split_terms(node.args[0]) + _split_terms(node.args[1])
    if node.op == "sub":
        return _split_terms(node.args[0]) + [E.Node("neg", (t,)) for t in _split_terms(node.args[1])]
    return [node]


def _indicator_region(node: E.Node):
    if node.op == "indicator":
        return node.value
    if node.op == "mul":
        a, b = node.args
        if E.is_constant(a) and E.constant_value(a) > 0 and b.op == "indicator":
            return b.value
        if E.is_constant(b) and E.constant_value(b) > 0 and a.op == "indicator":
            return a.value
    return None


def region_normal_cone(region, x) -> LimitSet:
    """Normal cone of an indicator's region at x."""
    n = len(x)
    if isinstance(region, E.GuardRegion):
        rows = []
        for q in region.ineqs:
            c = np.asarray(q.coeffs)
            if abs(c @ x + q.const) <= 1e-9 * (1 + np.abs(x).max()) and np.any(c):
                rows.append(c)
        if not rows:
            return LimitSet.zero_cone(n)
        return LimitSet.cone(np.array(rows), n, convex=True)
    from .sets import normal_cone_at
    return normal_cone_at(region, x)


def _nearby_directions(n: int) -> np.ndarray:
    D = [np.eye(n), -np.eye(n), spiral_directions(n, max(16, 8 * n))]
    if n >= 2:
        D.append(safe_normalize(np.array(np.meshgrid(*[[-1.0, 1.0]] * n)).reshape(n, -1).T))
    return np.vstack(D)


def _hull_fill(V: np.ndarray, weights=np.linspace(0.0, 1.0, 41)) -> np.ndarray:
    """Points on edges of the convex hull of V (pairwise convex combinations)."""
    if len(V) < 2:
        return V
    out = [V]
    for i in range(len(V)):
        for j in range(i + 1, len(V)):
            out.append(weights[1:-1, None] * V[i] + (1 - weights[1:-1, None]) * V[j])
    return np.vstack(out)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def _smooth_part_subdiff(node: E.Node, n: int, x: np.ndarray):
    """(values, singular dirs, convex flag) for an indicator-free expression at x."""
    X = x[None, :]
    v, G, dom, kink = E._fwd(node, X)
    finite = np.all(np.isfinite(G[0]))
    if not kink[0] and finite:
        return G[:1].copy(), np.zeros((0, n))
    scale = 1.0 + np.linalg.norm(x)
    D = _nearby_directions(n)
    vals, sing = [], []
    etas = (1e-5 * scale, 1e-7 * scale, 1e-9 * scale)
    norms_by_eta = []
    grads_by_eta = []
    for eta in etas:
        P = x + eta * D
        v2, G2, dom2, kink2 = E._fwd(node, P)
        ok = dom2 & ~kink2 & np.all(np.isfinite(G2), axis=1)
        grads_by_eta.append((G2, ok))
        norms_by_eta.append(np.where(ok, np.linalg.norm(G2, axis=1), np.nan))
    G_small, ok_small = grads_by_eta[-1]
    n_big, n_small = norms_by_eta[0], norms_by_eta[-1]
    blow = ok_small & (n_small >= BLOWUP_MIN) & (n_small >= BLOWUP_RATIO * np.nan_to_num(n_big, nan=np.inf))
    if blow.any():
        sing.append(safe_normalize(G_small[blow]))
    G_mid, ok_mid = grads_by_eta[1]
    keep = ok_mid & ~blow
    if keep.any():
        tol = 1e-5 * (1 + np.abs(G_mid[keep]).max())
        reps, _ = cluster(G_mid[keep], tol)
        vals.append(reps)
    values = np.vstack(vals) if vals else np.zeros((0, n))
    S = np.vstack(sing) if sing else np.zeros((0, n))
    if len(S):
        S, _ = cluster(S, 0.02, unit=True)
    return values, S


def subdiff_at(f: E.FunctionSpec, x) -> SubgradientSample:
    """Limiting subdifferential of f at x (extreme points, conic part, singular directions)."""
    x = np.asarray(x, float).reshape(-1)
    n = f.dim
    if len(x) != n:
        raise ValueError("dimension mismatch")
    fx = E.eval_batch(f, x[None, :])[0]
    if not np.isfinite(fx):
        raise NotInSet(f"{x.tolist()} is outside dom f")
    terms = _split_terms(f.root)
    regions = [_indicator_region(t) for t in terms]
    rest = [t for t, r in zip(terms, regions) if r is None]
    if any(t.op == "indicator" or _contains_indicator(t) for t in rest):
        raise UnsupportedClass("indicator nested inside a non-additive expression")
    node = rest[0] if rest else E.const(0.0)
    for t in rest[1:]:
        node = E.Node("add", (node, t))
    values, sing = _smooth_part_subdiff(node, n, x)
    if not len(values):
        if any(r is not None for r in regions):
            raise UnsupportedClass("no gradient information near x")
        return _epigraph_fallback(f, x, fx)
    rays, cones_convex = [], True
    for r in regions:
        if r is not None:
            N = region_normal_cone(r, x)
            cones_convex = cones_convex and N.convex
            rays += list(N.nonzero_rays())
    rays = np.array(rays).reshape(-1, n)
    all_sing = np.vstack([sing, rays]) if len(rays) else sing
    if len(all_sing):
        all_sing, _ = cluster(all_sing, 1e-9, unit=True)
    convex = (E.CONVEX in f.class_tags or len(values) == 1) and (cones_convex or not len(rays))
    return SubgradientSample(x, values, all_sing, fx, rays=rays, convex=convex)


def _epigraph_fallback(f: E.FunctionSpec, x, fx) -> SubgradientSample:
    """Slice sampled normals to epi f at (x, f(x)): (u, -1) gives values, (u, 0) singular directions."""
    from .sets import epigraph, sampled_normal_cone
    n = f.dim
    N = sampled_normal_cone(epigraph(f), np.append(x, fx))
    R = N.nonzero_rays()
    vals = [r[:n] / -r[n] for r in R if r[n] < -1e-6]
    sing = [r[:n] / np.linalg.norm(r[:n]) for r in R if abs(r[n]) <= 0.02 and np.linalg.norm(r[:n]) > 0]
    if not vals:
        raise UnsupportedClass("epigraph sampling found no subgradients")
    return SubgradientSample(x, np.array(vals), np.array(sing).reshape(-1, n), fx, method="epigraph")


def _contains_indicator(node: E.Node) -> bool:
    return any(m.op == "indicator" for m in E._walk(node))


def singular_subdiff_at(f: E.FunctionSpec, x) -> LimitSet:
    s = subdiff_at(f, x)
    return s.singular_cone()


def is_lipschitz_near(sample: SubgradientSample) -> bool:
    return len(sample.singular_dirs) == 0


def pointwise_sum_rule(f1: E.FunctionSpec, f2: E.FunctionSpec, x) -> SubgradientSample:
    """Sum-rule bound: Minkowski sum of the two pointwise subdifferentials."""
    s1, s2 = subdiff_at(f1, x), subdiff_at(f2, x)
    if not is_lipschitz_near(s1) and not is_lipschitz_near(s2):
        raise BothNonLipschitz("both summands fail to be Lipschitz near x")
    vals = np.array([a + b for a in s1.values for b in s2.values])
    convex = s1.convex and s2.convex
    rays = np.vstack([s1.rays, s2.rays])
    sing = np.vstack([s1.singular_dirs, s2.singular_dirs])
    return SubgradientSample(s1.location, vals, sing, s1.f_value + s2.f_value, rays=rays, convex=convex)


# ---------------------------------------------------------------------------
# batch interface used by the estimators at infinity
# ---------------------------------------------------------------------------

def subgradients_batch(f: E.FunctionSpec, X, max_kinks: int = 4000):
    """Subgradient values and singular directions at many points.

    Returns
    -------
    rows_v, V : owner row and value for each bounded subgradient (convex parts edge-filled)
    rows_r, R : owner row and unit ray for conic parts (normal cones of indicators)
    rows_s, Sg : owner row and unit singular direction
    in_dom : boolean mask
    """
    X = np.atleast_2d(np.asarray(X, float))
    m, n = X.shape
    v, G, dom, kink = E.grad_batch(f, X)
    in_dom = np.isfinite(v)
    # overflowing gradients stay here: the estimators read them as escaping values
    smooth = in_dom & ~kink & ~np.any(np.isnan(G), axis=1)
    rows_v = [np.flatnonzero(smooth)]
    V = [G[smooth]]
    rows_r, R, rows_s, Sg = [], [], [], []
    special = np.flatnonzero(in_dom & ~smooth)[:max_kinks]
    for i in special:
        try:
            s = subdiff_at(f, X[i])
        except UnsupportedClass:
            continue
        vals = _hull_fill(s.values) if s.convex else s.values
        rows_v.append(np.full(len(vals), i))
        V.append(vals)
        if len(s.rays):
            rows_r.append(np.full(len(s.rays), i))
            R.append(s.rays)
        if len(s.singular_dirs):
            rows_s.append(np.full(len(s.singular_dirs), i))
            Sg.append(s.singular_dirs)

    def cat(rows, arrs):
        if not rows:
            return np.zeros(0, int), np.zeros((0, n))
        return np.concatenate(rows).astype(int), np.vstack(arrs)

    rv, V = cat(rows_v, V)
    rr, R = cat(rows_r, R)
    rs, Sg = cat(rows_s, Sg)
    return rv, V, rr, R, rs, Sg, in_dom
