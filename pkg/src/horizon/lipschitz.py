"""Lipschitz behaviour at infinity, Clarke hulls and two closed-form special cases."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import expr as E
from . import sets as S_
from .certificate import Certificate, fails, holds, inconclusive
from .cones import estimate_normal_cone
from .errors import NotLipschitzAtInfinity, NotPiecewiseLinear, UnboundedProjectionRequired
from .infinity import estimate_at_infinity
from .limitset import (LimitSet, SamplingPlan, cluster, convex_hull, directed_excess, safe_normalize,
                       spiral_directions, union)
from .polyhedral import polyhedron_unbounded

QUOTIENT_SLACK = 0.02
N_PAIRS = 200


@dataclass
class LipschitzReport:
    verdict: Certificate
    L_estimate: float | None = None
    R_estimate: float | None = None
    clarke_hull: LimitSet | None = None
    quotients: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.to_dict(), "L": self.L_estimate, "R": self.R_estimate,
                "hull": None if self.clarke_hull is None else self.clarke_hull.to_dict(),
                "quotients": self.quotients}


def _quotient_pairs(n: int, radii, seed: int = 0, k: int = N_PAIRS):
    """Pairs (x, x') with ||x|| on the given radii and ||x - x'|| <= ||x||/2."""
    rng = np.random.default_rng(seed)
    D = spiral_directions(n, k, seed) if n > 1 else rng.choice([-1.0, 1.0], size=(k, 1))
    r = rng.choice(np.asarray(radii, float), size=k)
    X = r[:, None] * D
    step = safe_normalize(rng.normal(size=(k, n)))
    s = r * np.exp(rng.uniform(np.log(1e-3), np.log(0.5), size=k))
    return X, X + s[:, None] * step


def difference_quotients(f: E.FunctionSpec, R: float, r_max: float, seed: int = 0) -> np.ndarray:
    """|f(x) - f(x')| / ||x - x'|| on pairs whose segments stay outside B_R."""
    radii = np.geomspace(2 * R, r_max, 6) if r_max > 2 * R else [2 * R]
    X, Y = _quotient_pairs(f.dim, radii, seed)
    with np.errstate(all="ignore"):
        fx, fy = E.eval_batch(f, X), E.eval_batch(f, Y)
    ok = np.isfinite(fx) & np.isfinite(fy)
    return np.abs(fx[ok] - fy[ok]) / np.linalg.norm(X[ok] - Y[ok], axis=1)


def lipschitz_at_infinity(f: E.FunctionSpec, plan: SamplingPlan | None = None) -> LipschitzReport:
    """Holds iff the estimated singular subdifferential at infinity is {0}."""
    plan = plan or SamplingPlan()
    est = estimate_at_infinity(f, plan)
    m = plan.stability_window
    last = est.trace[-m:]
    trace = [{"levels": last, "singular": est.singular.to_dict()}]
    if any(t["in_domain"] < t["samples"] for t in last):
        return LipschitzReport(fails(1.0, trace=trace, note="f takes the value +inf at escaping samples"))
    rays = est.singular.nonzero_rays()
    if len(rays):
        return LipschitzReport(fails(1.0, witnesses=[rays[0]], trace=trace,
                                     note="persistent singular ray"))
    if any(t["escaping_values"] for t in last):
        return LipschitzReport(inconclusive(trace=trace, note="divergent subgradients without a persistent direction"))
    L = max(t["max_bounded_norm"] for t in last)
    # smallest level radius from which every later level respects the bound
    R = last[0]["radius"]
    for t in reversed(est.trace):
        if t["max_bounded_norm"] > L * (1 + QUOTIENT_SLACK):
            break
        R = t["radius"]
    q = difference_quotients(f, R, est.trace[-1]["radius"], plan.seed)
    qmax = float(q.max()) if len(q) else 0.0
    qinfo = {"pairs": int(len(q)), "max": qmax, "R": R}
    trace.append({"quotients": qinfo})
    if qmax > L * (1 + QUOTIENT_SLACK) + 1e-12:
        return LipschitzReport(inconclusive(trace=trace, note="difference quotients exceed the subgradient bound"),
                               quotients=qinfo)
    hull = convex_hull(est.limiting)
    return LipschitzReport(holds(max(L, 1e-12), trace=trace, note="singular cone is {0}"),
                           float(L), float(R), hull, qinfo)


def clarke_at_infinity(f: E.FunctionSpec, plan: SamplingPlan | None = None) -> LimitSet:
    """Convex hull of the limiting estimate; requires Lipschitz behaviour at infinity."""
    rep = lipschitz_at_infinity(f, plan)
    if not rep.verdict.holds:
        raise NotLipschitzAtInfinity(rep.verdict.note or "not Lipschitz at infinity")
    return rep.clarke_hull


# ---------------------------------------------------------------------------
# piecewise-linear functions
# ---------------------------------------------------------------------------

def _pieces(node: E.Node, n: int):
    """Affine pieces (a, b, rows) of a piecewise-linear tree, region = {x : rows @ [x, 1] <= 0}."""
    af = E.affine_form(node, n)
    if af is not None:
        return [(af[0], float(af[1]), np.zeros((0, n + 1)))]
    op = node.op
    if op in ("add", "sub"):
        s = 1.0 if op == "add" else -1.0
        out = []
        for a1, b1, r1 in _pieces(node.args[0], n):
            for a2, b2, r2 in _pieces(node.args[1], n):
                out.append((a1 + s * a2, b1 + s * b2, np.vstack([r1, r2])))
        return out
    if op == "neg":
        return [(-a, -b, r) for a, b, r in _pieces(node.args[0], n)]
    if op == "mul" or op == "div":
        l, r = node.args
        if op == "div":
            k, inner = 1.0 / E.constant_value(r), l
        elif E.is_constant(l):
            k, inner = E.constant_value(l), r
        else:
            k, inner = E.constant_value(r), l
        return [(k * a, k * b, rows) for a, b, rows in _pieces(inner, n)]
    if op == "pow" and node.value == 1:
        return _pieces(node.args[0], n)
    if op == "abs":
        out = []
        for a, b, rows in _pieces(node.args[0], n):
            row = np.append(a, b)
            out.append((a, b, np.vstack([rows, -row])))
            out.append((-a, -b, np.vstack([rows, row])))
        return out
    if op in ("max", "min"):
        sgn = 1.0 if op == "max" else -1.0
        P1, P2 = _pieces(node.args[0], n), _pieces(node.args[1], n)
        out = []
        for a1, b1, r1 in P1:
            for a2, b2, r2 in P2:
                d = sgn * np.append(a2 - a1, b2 - b1)
                out.append((a1, b1, np.vstack([r1, r2, d])))
                out.append((a2, b2, np.vstack([r1, r2, -d])))
        return out
    if op == "piecewise":
        out = []
        for guard, expr in zip(node.value, node.args):
            g = np.array([np.append(q.coeffs, q.const) for q in guard]).reshape(-1, n + 1)
            out += [(a, b, np.vstack([rows, g])) for a, b, rows in _pieces(expr, n)]
        return out
    raise NotPiecewiseLinear(f"operation {op!r} is not piecewise linear")


def _full_dimensional(rows: np.ndarray, n: int) -> bool:
    """The region has an interior point (Chebyshev-ball LP with positive radius)."""
    if not len(rows):
        return True
    A, b = rows[:, :n], -rows[:, n]
    nrm = np.linalg.norm(A, axis=1)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.column_stack([A, nrm]), b_ub=b,
                  bounds=[(None, None)] * n + [(0, 1)], method="highs")
    return res.status == 0 and -res.fun > 1e-9


def unbounded_pieces(f: E.FunctionSpec):
    """Gradients a_i of the pieces whose regions are full-dimensional and unbounded."""
    if E.PIECEWISE_LINEAR not in f.class_tags:
        raise NotPiecewiseLinear(f"{E.to_text(f)} is not tagged piecewise linear")
    n = f.dim
    grads = []
    for a, b, rows in _pieces(f.root, n):
        if not _full_dimensional(rows, n):
            continue
        if len(rows) and not polyhedron_unbounded(rows[:, :n], -rows[:, n]):
            continue
        grads.append(a)
    return np.unique(np.round(np.array(grads).reshape(-1, n), 12), axis=0)


def piecewise_linear_exact(f: E.FunctionSpec, plan: SamplingPlan | None = None):
    """Exact bound co{a_i : piece i has an unbounded region} and the matching Lipschitz report."""
    plan = plan or SamplingPlan()
    A = unbounded_pieces(f)
    bound = convex_hull(LimitSet.from_points(A, f.dim))
    L = float(np.linalg.norm(A, axis=1).max()) if len(A) else 0.0
    direct = estimate_at_infinity(f, plan).limiting
    excess = directed_excess(direct, bound)
    trace = [{"pieces": A, "direct": direct.to_dict(), "excess": excess}]
    if excess <= 0.05:
        cert = holds(L if L > 0 else 1e-12, witnesses=list(A), trace=trace, note="direct estimate inside the bound")
    else:
        cert = inconclusive(trace=trace, witnesses=list(A), note="direct estimate leaves the exact bound")
    return bound, LipschitzReport(cert, L, None, bound)


# ---------------------------------------------------------------------------
# distance functions
# ---------------------------------------------------------------------------

def distance_subdiff_at_infinity(S: S_.SetSpec, plan: SamplingPlan | None = None):
    """(limiting, singular) subdifferentials at infinity of the distance function to S."""
    plan = plan or SamplingPlan()
    n = S.dim
    zero = LimitSet.zero_cone(n)
    if S.kind == "whole":
        return LimitSet.from_points(np.zeros((1, n)), n), zero
    if S.is_bounded() is True:
        sphere = LimitSet(n, np.vstack([np.eye(n), -np.eye(n)]), np.zeros((0, n)), (), False, sphere=True)
        return sphere, zero
    try:
        est = estimate_normal_cone(S, tuple(range(n)), plan)
    except UnboundedProjectionRequired:
        sphere = LimitSet(n, np.vstack([np.eye(n), -np.eye(n)]), np.zeros((0, n)), (), False, sphere=True)
        return sphere, zero
    # N cap B: unit segments along each normal ray, stored as points at 0.01 spacing
    t = np.linspace(0.0, 1.0, 101)[:, None]
    seg = [t * r for r in est.cone.nonzero_rays()] or [np.zeros((1, n))]
    NB = LimitSet.from_points(np.vstack(seg), n)
    offsets = _offset_directions(S, plan)
    return union(NB, offsets), zero


def _offset_directions(S, plan) -> LimitSet:
    """Unit offsets (x - proj x)/d recurring over the last levels.

    Sampled without the normal-cone estimator's distance cap, which would drop
    every off-set sample of a half-line.
    """
    n = S.dim
    D = spiral_directions(n, plan.dirs_per_level, plan.seed)
    levels = []
    for r in plan.radii()[-plan.stability_window:]:
        X = r * D
        Y, d = S_.project_batch(S, X)
        off = d > 1e-9 * r
        levels.append(safe_normalize(X[off] - Y[off]))
    if any(len(U) == 0 for U in levels):
        return LimitSet.empty(n)
    tol = plan.cluster_tol
    keep = [u for u in levels[-1]
            if all(np.linalg.norm(U - u, axis=1).min() <= tol for U in levels[:-1])]
    if not keep:
        return LimitSet.empty(n)
    return LimitSet.from_points(cluster(np.array(keep), tol, unit=True)[0], n)
