"""Finite representations of asymptotic limit sets and the sampling plan.

A LimitSet denotes a closed set built from bounded points and unit rays.

* default: ``points`` union the rays ``{a + t r : t >= 0}``, where ``a`` is the
  origin (anchor -1) or one of the points (anchor index).
* ``convex``: ``conv(points) + cone(rays)``.
* ``sphere``: additionally contains the unit sphere.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize, nnls
from scipy.spatial import Delaunay, QhullError, cKDTree
from scipy.stats import norm as _normal
from scipy.stats import qmc

DEDUP_TOL = 1e-7
DEFAULT_T = 2.0


# ---------------------------------------------------------------------------
# sampling plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingPlan:
    r0: float = 4.0
    rho: float = 2.0
    levels: int = 10
    dirs_per_level: int = 64
    cluster_tol: float = 0.02
    divergence_threshold: float = 8.0
    stability_window: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if not self.rho > 1:
            raise ValueError("rho must exceed 1")
        if not (self.levels >= self.stability_window >= 2):
            raise ValueError("need levels >= stability_window >= 2")
        if not self.cluster_tol > 0:
            raise ValueError("cluster_tol must be positive")
        if not self.divergence_threshold > 1:
            raise ValueError("divergence_threshold must exceed 1")
        if self.dirs_per_level < 2:
            raise ValueError("dirs_per_level must be at least 2")

    def radii(self) -> np.ndarray:
        return self.r0 * self.rho ** np.arange(self.levels)

    def refined(self) -> "SamplingPlan":
        """One refinement step: twice the directions and one more level."""
        return replace(self, dirs_per_level=2 * self.dirs_per_level, levels=self.levels + 1)

    def to_dict(self) -> dict:
        return {
            "r0": self.r0, "rho": self.rho, "levels": self.levels,
            "dirs_per_level": self.dirs_per_level, "cluster_tol": self.cluster_tol,
            "divergence_threshold": self.divergence_threshold,
            "stability_window": self.stability_window, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingPlan":
        known = {k: d[k] for k in cls().to_dict() if k in d}
        return cls(**known)


def spiral_directions(n: int, k: int, seed: int = 0) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in R^n.

    n=1 gives {-1, 1}; n=2 equally spaced angles (axes included when 4 | k);
    n=3 a Fibonacci spiral; higher n uses a scrambled Halton sequence.
    """
    if n == 1:
        return np.array([[-1.0], [1.0]])
    if n == 2:
        phase = 0.0 if seed == 0 else (seed * 0.6180339887498949) % 1.0
        th = 2 * np.pi * (np.arange(k) + phase) / k
        return np.column_stack([np.cos(th), np.sin(th)])
    if n == 3:
        i = np.arange(k) + 0.5
        z = 1 - 2 * i / k
        phi = np.pi * (1 + 5 ** 0.5) * i + seed
        s = np.sqrt(1 - z * z)
        return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
    h = qmc.Halton(d=n, scramble=True, seed=seed).random(k)
    g = _normal.ppf(np.clip(h, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# vector helpers
# ---------------------------------------------------------------------------

def safe_normalize(V) -> np.ndarray:
    """Normalize rows; rows with infinite entries map to the normalized sign pattern."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    out = np.zeros_like(V)
    inf = ~np.isfinite(V)
    has_inf = inf.any(axis=1)
    if has_inf.any():
        S = np.where(inf[has_inf], np.sign(np.nan_to_num(V[has_inf], nan=0.0, posinf=1.0, neginf=-1.0)), 0.0)
        out[has_inf] = S / np.maximum(np.linalg.norm(S, axis=1, keepdims=True), 1e-300)
    fin = ~has_inf
    if fin.any():
        W = V[fin]
        scale = np.abs(W).max(axis=1, keepdims=True)
        scale = np.where(scale == 0, 1.0, scale)
        W = W / scale
        nrm = np.linalg.norm(W, axis=1, keepdims=True)
        out[fin] = np.where(nrm == 0, 0.0, W / np.where(nrm == 0, 1.0, nrm))
    return out


def lex_sort(V: np.ndarray) -> np.ndarray:
    if len(V) == 0:
        return V
    order = np.lexsort(V.T[::-1])
    return V[order]


def cluster(V, tol: float, unit: bool = False):
    """Greedy deterministic clustering.

    Rows are visited in lexicographic order; each joins the first cluster whose
    running mean lies within ``tol``. Returns (representatives, counts), sorted
    lexicographically. Unit clusters are renormalized.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.size == 0:
        return np.zeros((0, V.shape[1] if V.ndim == 2 else 0)), np.zeros(0, int)
    V = lex_sort(V)
    reps: list[np.ndarray] = []
    sums: list[np.ndarray] = []
    counts: list[int] = []
    for v in V:
        placed = False
        if reps:
            R = np.asarray(reps)
            d = np.linalg.norm(R - v, axis=1)
            j = int(np.argmin(d))
            if d[j] <= tol:
                sums[j] += v
                counts[j] += 1
                m = sums[j] / counts[j]
                if unit:
                    m = m / max(np.linalg.norm(m), 1e-300)
                reps[j] = m
                placed = True
        if not placed:
            reps.append(v.copy())
            sums.append(v.copy())
            counts.append(1)
    R = np.asarray(reps)
    order = np.lexsort(R.T[::-1])
    return R[order], np.asarray(counts)[order]


def dedup(V, tol: float = DEDUP_TOL) -> np.ndarray:
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.size == 0:
        return V.reshape(0, V.shape[1] if V.ndim == 2 else 0)
    V = lex_sort(V)
    # greedy in lexicographic order: a row survives unless an earlier survivor is within tol
    near = cKDTree(V).query_ball_point(V, tol)
    kept = np.zeros(len(V), bool)
    for i, nb in enumerate(near):
        kept[i] = not any(kept[j] for j in nb if j < i)
    return V[kept]


def angle_between(u, v) -> float:
    c = float(np.clip(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0))
    return math.acos(c)


# ---------------------------------------------------------------------------
# LimitSet
# ---------------------------------------------------------------------------

@dataclass
class LimitSet:
    dim: int
    points: np.ndarray = None
    rays: np.ndarray = None
    anchors: tuple = ()
    is_cone: bool = False
    trunc_radius: float = DEFAULT_T
    convex: bool = False
    sphere: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.dim
        self.points = np.zeros((0, n)) if self.points is None else np.asarray(self.points, float).reshape(-1, n)
        self.rays = np.zeros((0, n)) if self.rays is None else np.asarray(self.rays, float).reshape(-1, n)
        if len(self.rays):
            self.rays = safe_normalize(self.rays)
        if not self.anchors or len(self.anchors) != len(self.rays):
            self.anchors = tuple([-1] * len(self.rays))
        else:
            self.anchors = tuple(int(a) for a in self.anchors)
        self._canonicalize()
        if self.is_cone and len(self.points) and np.abs(self.points).max() > DEDUP_TOL:
            raise ValueError("a cone may only carry the origin as a point")
        if self.is_cone and any(a >= 0 for a in self.anchors):
            raise ValueError("a cone cannot carry anchored rays")

    # -- constructors ------------------------------------------------------
    @classmethod
    def empty(cls, dim: int, **kw) -> "LimitSet":
        return cls(dim, **kw)

    @classmethod
    def zero_cone(cls, dim: int) -> "LimitSet":
        return cls(dim, points=np.zeros((1, dim)), is_cone=True)

    @classmethod
    def cone(cls, rays, dim: int | None = None, convex: bool = False) -> "LimitSet":
        rays = np.atleast_2d(np.asarray(rays, float))
        d = dim if dim is not None else rays.shape[1]
        return cls(d, points=np.zeros((1, d)), rays=rays.reshape(-1, d), is_cone=True, convex=convex)

    @classmethod
    def from_points(cls, pts, dim: int | None = None, convex: bool = False) -> "LimitSet":
        pts = np.atleast_2d(np.asarray(pts, float))
        d = dim if dim is not None else pts.shape[1]
        return cls(d, points=pts.reshape(-1, d), convex=convex)

    # -- canonical form ----------------------------------------------------
    def _canonicalize(self):
        pts = self.points
        if len(pts):
            pts = dedup(pts)
        # remap anchors after sorting points
        old = self.points
        pairs = []
        for r, a in zip(self.rays, self.anchors):
            if a >= 0:
                p = old[a]
                j = int(np.argmin(np.linalg.norm(pts - p, axis=1)))
                pairs.append((j, r))
            else:
                pairs.append((-1, r))
        uniq: list[tuple[int, np.ndarray]] = []
        for a, r in sorted(pairs, key=lambda t: (t[0],) + tuple(t[1])):
            if not any(a == b and np.linalg.norm(r - s) <= DEDUP_TOL for b, s in uniq):
                uniq.append((a, r))
        self.points = pts
        self.rays = np.asarray([r for _, r in uniq]).reshape(-1, self.dim)
        self.anchors = tuple(a for a, _ in uniq)

    # -- flags -------------------------------------------------------------
    @property
    def affine(self) -> bool:
        return any(a >= 0 for a in self.anchors)

    def is_empty(self) -> bool:
        return len(self.points) == 0 and len(self.rays) == 0 and not self.sphere

    def is_zero(self, tol: float = 1e-9) -> bool:
        """True when the denoted set is exactly {0}."""
        return (len(self.rays) == 0 and not self.sphere and len(self.points) >= 1
                and np.abs(self.points).max() <= tol)

    def nonzero_rays(self) -> np.ndarray:
        return self.rays[[a < 0 for a in self.anchors]] if len(self.rays) else self.rays

    # -- transforms --------------------------------------------------------
    def scaled(self, lam: float) -> "LimitSet":
        if lam <= 0:
            raise ValueError("scale must be positive")
        return LimitSet(self.dim, self.points * lam, self.rays.copy(), self.anchors, self.is_cone,
                        self.trunc_radius, self.convex, self.sphere and lam == 1)

    def negated(self) -> "LimitSet":
        return LimitSet(self.dim, -self.points, -self.rays, self.anchors, self.is_cone,
                        self.trunc_radius, self.convex, self.sphere)

    def shifted(self, v) -> "LimitSet":
        v = np.asarray(v, float)
        pts = self.points + v
        if self.is_cone:
            anchors = tuple(0 if a < 0 else a for a in self.anchors)
            pts = np.vstack([v[None, :], pts]) if not len(self.points) else pts
            return LimitSet(self.dim, pts, self.rays.copy(), anchors, False, self.trunc_radius, self.convex)
        return LimitSet(self.dim, pts, self.rays.copy(), self.anchors, False, self.trunc_radius, self.convex)

    def with_zero(self) -> "LimitSet":
        pts = np.vstack([self.points, np.zeros((1, self.dim))])
        return LimitSet(self.dim, pts, self.rays.copy(), self._remap_anchors(pts), self.is_cone,
                        self.trunc_radius, self.convex, self.sphere)

    def _remap_anchors(self, new_pts):
        out = []
        for a in self.anchors:
            if a < 0:
                out.append(-1)
            else:
                p = self.points[a]
                out.append(int(np.argmin(np.linalg.norm(new_pts - p, axis=1))))
        return tuple(out)

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "points": [[_clean(v) for v in p] for p in self.points],
            "rays": [[_clean(v) for v in r] for r in self.rays],
            "is_cone": bool(self.is_cone),
            "trunc_radius": float(self.trunc_radius),
        }
        if self.affine:
            d["anchors"] = list(self.anchors)
        if self.convex:
            d["convex"] = True
        if self.sphere:
            d["sphere"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict, dim: int | None = None) -> "LimitSet":
        pts = np.asarray(d.get("points", []), float)
        rays = np.asarray(d.get("rays", []), float)
        if dim is None:
            dim = pts.shape[1] if pts.size else (rays.shape[1] if rays.size else 1)
        return cls(dim, pts.reshape(-1, dim), rays.reshape(-1, dim), tuple(d.get("anchors", ())),
                   bool(d.get("is_cone", False)), float(d.get("trunc_radius", DEFAULT_T)),
                   bool(d.get("convex", False)), bool(d.get("sphere", False)))

    def __repr__(self):
        return (f"LimitSet(dim={self.dim}, points={self.points.tolist()}, rays={self.rays.tolist()}, "
                f"anchors={list(self.anchors)}, is_cone={self.is_cone}, convex={self.convex}, "
                f"sphere={self.sphere})")

    # -- geometry ----------------------------------------------------------
    def discretize(self, T: float | None = None, h: float = 0.005) -> np.ndarray:
        """Sample the denoted set intersected with the closed ball of radius T."""
        T = self.trunc_radius if T is None else T
        n = self.dim
        chunks = []
        if self.convex and (len(self.points) + len(self.rays)) > 0:
            chunks.append(_convex_samples(self.points, self.rays, T, h))
        else:
            if len(self.points):
                chunks.append(self.points)
            for r, a in zip(self.rays, self.anchors):
                base = np.zeros(n) if a < 0 else self.points[a]
                t_hi = _ray_exit(base, r, T)
                if t_hi is None:
                    continue
                t_lo = _ray_entry(base, r, T)
                ts = np.arange(t_lo, t_hi + h, h)
                ts = ts[ts <= t_hi + 1e-12]
                chunks.append(base + ts[:, None] * r)
        if self.sphere:
            chunks.append(_sphere_samples(n, h))
        if not chunks:
            return np.zeros((0, n))
        P = np.vstack(chunks)
        return P[np.linalg.norm(P, axis=1) <= T + 1e-12]

    def contains(self, v, tol: float = 1e-6) -> bool:
        return self.distance_to(v) <= tol

    def distance_to(self, v) -> float:
        """Euclidean distance from v to the denoted set."""
        return float(self.distances_to(np.asarray(v, float).reshape(1, -1))[0])

    def distances_to(self, V) -> np.ndarray:
        """Distances from each row of V to the denoted set."""
        V = np.asarray(V, float).reshape(-1, self.dim)
        if self.convex:
            if not (len(self.points) or len(self.rays)):
                return np.full(len(V), np.inf)
            return np.array([min_norm_convex(self.points - v, self.rays) for v in V])
        best = np.full(len(V), np.inf)
        if len(self.points):
            best = cKDTree(self.points).query(V)[0]
        for r, a in zip(self.rays, self.anchors):
            base = np.zeros(self.dim) if a < 0 else self.points[a]
            t = np.maximum(0.0, (V - base) @ r)
            best = np.minimum(best, np.linalg.norm(base + t[:, None] * r - V, axis=1))
        if self.sphere:
            best = np.minimum(best, np.abs(np.linalg.norm(V, axis=1) - 1.0))
        return best


def _clean(v: float) -> float:
    v = float(v)
    if abs(v) < 1e-15:
        return 0.0
    return float(f"{v:.12g}")


def _ray_exit(base, r, T):
    # largest t >= 0 with |base + t r| <= T
    b = float(np.dot(base, r))
    c = float(np.dot(base, base)) - T * T
    disc = b * b - c
    if disc < 0:
        return None
    t = -b + math.sqrt(disc)
    return t if t >= 0 else None


def _ray_entry(base, r, T):
    b = float(np.dot(base, r))
    c = float(np.dot(base, base)) - T * T
    disc = b * b - c
    if c <= 0:
        return 0.0
    return max(0.0, -b - math.sqrt(max(disc, 0.0)))


def _sphere_samples(n, h):
    if n == 1:
        return np.array([[-1.0], [1.0]])
    if n == 2:
        k = max(8, int(math.ceil(2 * math.pi / h)))
        th = 2 * np.pi * np.arange(k) / k
        return np.column_stack([np.cos(th), np.sin(th)])
    k = max(64, int(4 * math.pi / (h * h)))
    k = min(k, 200000)
    return spiral_directions(n, k)


def _convex_samples(P, R, T, h):
    """Dense samples of conv(P) + cone(R) inside B_T for small dimensions."""
    n = P.shape[1] if len(P) else R.shape[1]
    if not len(P):
        P = np.zeros((1, n))
    far = 4.0 * T + 4.0 * (np.linalg.norm(P, axis=1).max() if len(P) else 0.0)
    gens = [P]
    for r in R:
        gens.append(P + far * r)
    V = np.vstack(gens)
    if n == 1:
        lo, hi = V.min(), V.max()
        lo, hi = max(lo, -T), min(hi, T)
        if lo > hi:
            return np.zeros((0, 1))
        return np.linspace(lo, hi, max(2, int((hi - lo) / h) + 2))[:, None]
    step = h if n == 2 else max(h, 0.04)
    g = np.arange(-T, T + step / 2, step)
    grid = np.array(np.meshgrid(*([g] * n), indexing="ij")).reshape(n, -1).T
    grid = grid[np.linalg.norm(grid, axis=1) <= T]
    try:
        tri = Delaunay(V)
        inside = tri.find_simplex(grid) >= 0
        out = [grid[inside], V[np.linalg.norm(V, axis=1) <= T]]
        # edges keep thin parts of the set visible to the grid
        for i, j in itertools.combinations(range(len(V)), 2):
            seg = V[i] + np.linspace(0, 1, 200)[:, None] * (V[j] - V[i])
            out.append(seg[np.linalg.norm(seg, axis=1) <= T])
        return np.vstack(out)
    except (QhullError, ValueError):
        out = [V[np.linalg.norm(V, axis=1) <= T]]
        for i, j in itertools.combinations(range(len(V)), 2):
            seg = V[i] + np.linspace(0, 1, 2000)[:, None] * (V[j] - V[i])
            out.append(seg[np.linalg.norm(seg, axis=1) <= T])
        return np.vstack(out)


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------

def truncated_hausdorff(A: LimitSet, B: LimitSet, T: float = DEFAULT_T, h: float = 0.005) -> float:
    """Hausdorff distance between A and B truncated to the ball B_T.

    Each side is compared against the other set on a slightly larger ball, so a
    point sitting exactly at radius T does not flip the answer to infinity.
    """
    return max(directed_excess(A, B, T, h), directed_excess(B, A, T, h))


def directed_excess(A: LimitSet, B: LimitSet, T: float = DEFAULT_T, h: float = 0.005) -> float:
    """sup over a in A within B_T of dist(a, B), with B sampled on a slightly larger ball."""
    PA = A.discretize(T, h)
    if len(PA) == 0:
        return 0.0
    PB = B.discretize(T + 1.0, h)
    if len(PB) == 0:
        return math.inf
    return float(cKDTree(PB).query(PA)[0].max())


def ray_excess(A: LimitSet, B: LimitSet) -> float:
    """Largest angle from an origin ray of A to the nearest origin ray of B (0 if A has none)."""
    ra = A.nonzero_rays()
    if not len(ra):
        return 0.0
    rb = B.nonzero_rays()
    if B.convex and (len(B.rays)):
        # a ray lies in a convex cone when its unit vector is in cone(rays)
        return max(math.asin(min(1.0, min_norm_cone(B.rays, r))) for r in ra)
    if not len(rb):
        return math.pi
    return max(min(angle_between(r, s) for s in rb) for r in ra)


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------

def union(A: LimitSet, B: LimitSet) -> LimitSet:
    if A.dim != B.dim:
        raise ValueError("dimension mismatch")
    if A.convex or B.convex:
        A, B = to_union_form(A), to_union_form(B)
    pts = np.vstack([A.points, B.points])
    rays = np.vstack([A.rays, B.rays])
    anchors = tuple(A.anchors) + tuple(a if a < 0 else a + len(A.points) for a in B.anchors)
    return LimitSet(A.dim, pts, rays, anchors, A.is_cone and B.is_cone,
                    max(A.trunc_radius, B.trunc_radius), False, A.sphere or B.sphere)


def to_union_form(A: LimitSet, step: float = 0.01) -> LimitSet:
    """Approximate a convex LimitSet by points and sector rays."""
    if not A.convex:
        return A
    P, R = A.points, A.rays
    pts = [P]
    if len(P) >= 2:
        for i, j in itertools.combinations(range(len(P)), 2):
            k = max(2, int(np.linalg.norm(P[i] - P[j]) / step) + 1)
            pts.append(P[i] + np.linspace(0, 1, k)[:, None] * (P[j] - P[i]))
    pts = np.vstack(pts) if len(P) else np.zeros((1, A.dim))
    rays = _sector_rays(R, step) if len(R) else np.zeros((0, A.dim))
    if len(rays) and not (len(pts) == 1 and np.allclose(pts[0], 0)):
        base = pts
        all_pts = base
        anchors, all_rays = [], []
        for i in range(len(base)):
            for r in rays:
                anchors.append(i)
                all_rays.append(r)
        return LimitSet(A.dim, all_pts, np.asarray(all_rays), tuple(anchors), False, A.trunc_radius)
    return LimitSet(A.dim, pts, rays, (), A.is_cone, A.trunc_radius)


def _sector_rays(G: np.ndarray, step: float) -> np.ndarray:
    """Unit rays filling cone(G) at the given angular resolution."""
    G = safe_normalize(G)
    if len(G) <= 1:
        return G
    out = [G]
    for i, j in itertools.combinations(range(len(G)), 2):
        ang = angle_between(G[i], G[j])
        if ang >= math.pi - 1e-9:
            continue
        k = max(2, int(ang / step) + 1)
        lam = np.linspace(0, 1, k)[:, None]
        out.append(safe_normalize((1 - lam) * G[i] + lam * G[j]))
    if len(G) >= 3:
        rng = np.random.default_rng(0)
        w = rng.dirichlet(np.ones(len(G)), size=400 * len(G))
        out.append(safe_normalize(w @ G))
    return dedup(np.vstack(out), step / 4)


def minkowski_sum(A: LimitSet, B: LimitSet, step: float = 0.01) -> LimitSet:
    """A + B on finite representations.

    Points add pointwise; a point plus a ray gives an anchored ray; two rays span
    a planar sector, filled with rays at angular resolution ``step``.
    """
    if A.dim != B.dim:
        raise ValueError("dimension mismatch")
    n = A.dim
    if A.is_empty() or B.is_empty():
        return LimitSet.empty(n, trunc_radius=max(A.trunc_radius, B.trunc_radius))
    if A.convex and B.convex:
        P = np.array([p + q for p in (A.points if len(A.points) else np.zeros((1, n)))
                      for q in (B.points if len(B.points) else np.zeros((1, n)))])
        R = np.vstack([A.rays, B.rays])
        return LimitSet(n, P, R, (), A.is_cone and B.is_cone, max(A.trunc_radius, B.trunc_radius), True)
    A, B = to_union_form(A, step), to_union_form(B, step)
    pieces_a = list(_pieces(A))
    pieces_b = list(_pieces(B))
    pts, rays, anchors = [], [], []
    for (pa, ga), (pb, gb) in itertools.product(pieces_a, pieces_b):
        base = pa + pb
        G = np.vstack([ga, gb])
        if not len(G):
            pts.append(base)
            continue
        sector = _sector_rays(G, step)
        if np.linalg.norm(base) <= DEDUP_TOL:
            for r in sector:
                rays.append(r)
                anchors.append(-1)
            pts.append(np.zeros(n))
        else:
            pts.append(base)
            idx = len(pts) - 1
            for r in sector:
                rays.append(r)
                anchors.append(idx)
    P = np.asarray(pts).reshape(-1, n)
    R = np.asarray(rays).reshape(-1, n)
    is_cone = A.is_cone and B.is_cone
    return LimitSet(n, P, R, tuple(anchors), is_cone, max(A.trunc_radius, B.trunc_radius))


def _pieces(A: LimitSet):
    n = A.dim
    for r, a in zip(A.rays, A.anchors):
        base = np.zeros(n) if a < 0 else A.points[a]
        yield base, r[None, :]
    for p in A.points:
        yield p, np.zeros((0, n))


def convex_hull(A: LimitSet) -> LimitSet:
    """Closed convex hull, stored by extreme points and rays with the convex flag."""
    n = A.dim
    if A.is_empty():
        return LimitSet.empty(n, convex=True)
    P = A.points if len(A.points) else np.zeros((0, n))
    if A.sphere:
        P = np.vstack([P, np.eye(n), -np.eye(n)]) if n <= 2 else np.vstack([P, _sphere_samples(n, 0.05)])
    R = A.rays
    P = _extreme_points(P) if len(P) > 1 else P
    return LimitSet(n, P, R.copy(), (), A.is_cone, A.trunc_radius, True)


def _extreme_points(P: np.ndarray) -> np.ndarray:
    P = dedup(P)
    n = P.shape[1]
    if len(P) <= 2:
        return P
    if n == 1:
        return np.array([[P.min()], [P.max()]])
    try:
        from scipy.spatial import ConvexHull
        hull = ConvexHull(P)
        return lex_sort(P[np.unique(hull.vertices)])
    except (QhullError, ValueError):
        # degenerate: project on principal direction and keep the extremes
        c = P.mean(axis=0)
        u, s, vt = np.linalg.svd(P - c)
        t = (P - c) @ vt[0]
        return lex_sort(P[[int(np.argmin(t)), int(np.argmax(t))]])


# ---------------------------------------------------------------------------
# least-norm problems
# ---------------------------------------------------------------------------

def min_norm_hull(P: np.ndarray, tol: float = 1e-12, max_iter: int = 500):
    """Wolfe's algorithm: the point of conv(P) with least Euclidean norm.

    Returns (point, weights).
    """
    P = np.atleast_2d(np.asarray(P, float))
    m = len(P)
    j0 = int(np.argmin(np.einsum("ij,ij->i", P, P)))
    S = [j0]
    w = np.array([1.0])
    x = P[j0].copy()
    for _ in range(max_iter):
        scores = P @ x
        j = int(np.argmin(scores))
        if x @ x - scores[j] <= tol * max(1.0, np.abs(P).max() ** 2) or j in S:
            break
        S.append(j)
        w = np.append(w, 0.0)
        while True:
            Q = P[S]
            k = len(S)
            M = np.block([[Q @ Q.T, np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
            rhs = np.zeros(k + 1)
            rhs[-1] = 1.0
            sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
            v = sol[:k]
            if np.all(v > tol):
                w = v
                break
            mask = v <= tol
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(mask, w / (w - v), np.inf)
            theta = float(np.min(ratios[mask])) if mask.any() else 1.0
            theta = min(max(theta, 0.0), 1.0)
            w = theta * v + (1 - theta) * w
            keep = w > tol
            S = [s for s, kp in zip(S, keep) if kp]
            w = w[keep]
            w = w / w.sum()
        x = w @ P[S]
    weights = np.zeros(m)
    weights[S] = w
    return x, weights


def min_norm_cone(R: np.ndarray, v) -> float:
    """Distance from v to cone(R)."""
    R = np.atleast_2d(np.asarray(R, float))
    v = np.asarray(v, float)
    if not len(R):
        return float(np.linalg.norm(v))
    lam, res = nnls(R.T, v)
    return float(res)


def min_norm_convex(P: np.ndarray, R: np.ndarray) -> float:
    """Distance from 0 to conv(P) + cone(R)."""
    P = np.atleast_2d(np.asarray(P, float)) if len(P) else np.zeros((0, R.shape[1]))
    R = np.atleast_2d(np.asarray(R, float)) if len(R) else np.zeros((0, P.shape[1]))
    if not len(P):
        return 0.0
    if not len(R):
        x, _ = min_norm_hull(P)
        return float(np.linalg.norm(x))
    k, q = len(P), len(R)

    def obj(z):
        y = z[:k] @ P + z[k:] @ R
        return float(y @ y)

    def grad(z):
        y = z[:k] @ P + z[k:] @ R
        return np.concatenate([2 * P @ y, 2 * R @ y])

    best = math.inf
    for j in range(k):
        # start from each vertex combined with the conic projection of its negation
        lam, _ = nnls(R.T, -P[j])
        z0 = np.concatenate([np.eye(k)[j], lam])
        res = minimize(obj, z0, jac=grad, method="SLSQP",
                       bounds=[(0, None)] * (k + q),
                       constraints=[{"type": "eq", "fun": lambda z: z[:k].sum() - 1,
                                     "jac": lambda z: np.concatenate([np.ones(k), np.zeros(q)])}],
                       options={"ftol": 1e-16, "maxiter": 500})
        best = min(best, math.sqrt(max(obj(res.x), 0.0)), math.sqrt(max(obj(z0), 0.0)))
    return best


def min_norm(A: LimitSet) -> float:
    """Distance from the origin to the denoted set (inf when empty)."""
    if A.is_empty():
        return math.inf
    return A.distance_to(np.zeros(A.dim))
