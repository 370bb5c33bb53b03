"""Closed sets: definitions, membership, Euclidean projection and pointwise normal cones."""
from __future__ import annotations

import itertools
import re
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import elementwise, nnls

from . import expr as E
from .errors import DSLSyntaxError, NotInSet, ProjectionFailed, SemanticError
from .limitset import LimitSet, dedup, safe_normalize, spiral_directions

MEMBER_TOL = 1e-9


def _norm(V, axis=None, keepdims=False):
    """Euclidean norm that does not overflow for entries near the float limit."""
    V = np.asarray(V, float)
    with np.errstate(all="ignore"):
        s = np.max(np.abs(V), axis=axis, keepdims=True) if V.size else np.ones_like(V)
        s = np.where((s == 0) | ~np.isfinite(s), 1.0, s)
        out = s * np.sqrt(np.sum((V / s) ** 2, axis=axis, keepdims=True))
        big = ~np.isfinite(np.max(np.abs(V), axis=axis, keepdims=True)) if V.size else False
        out = np.where(big, np.inf, out)
    return out if keepdims else np.squeeze(out, axis=axis) if axis is not None else float(out.squeeze())


@dataclass(frozen=True, eq=False)
class SetSpec:
    """A closed subset of R^dim.

    kind is one of 'constraints', 'polyhedron', 'ball', 'halfspace', 'whole', 'product'.
    Constraint systems read g_i(x) <= 0 and h_j(x) = 0.
    """

    dim: int
    kind: str
    g: tuple = ()
    h: tuple = ()
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float = 0.0
    parts: tuple = ()
    name: str | None = None
    text: str = ""
    anchor: Callable | None = None  # epigraphs: value of the last coordinate on the graph

    @property
    def projection_method(self) -> str:
        return "PenaltyDescent" if self.kind == "constraints" else "ClosedForm"

    # -- membership --------------------------------------------------------
    def violation(self, X) -> np.ndarray:
        """Signed feasibility measure: <= 0 inside (up to tolerance)."""
        X = np.atleast_2d(np.asarray(X, float))
        m = X.shape[0]
        with np.errstate(all="ignore"):
            if self.kind == "whole":
                return np.full(m, -np.inf)
            if self.kind == "halfspace":
                a = self.A[0]
                return (X @ a - self.b[0]) / _norm(a)
            if self.kind == "polyhedron":
                nr = _norm(self.A, axis=1)
                return ((X @ self.A.T - self.b) / nr).max(axis=1)
            if self.kind == "ball":
                return _norm(X - self.center, axis=1) - self.radius
            if self.kind == "product":
                out, k = np.full(m, -np.inf), 0
                for p in self.parts:
                    out = np.maximum(out, p.violation(X[:, k:k + p.dim]))
                    k += p.dim
                return out
            vals = [E.eval_batch(gi, X) for gi in self.g]
            vals += [np.abs(E.eval_batch(hj, X)) for hj in self.h]
            V = np.column_stack(vals) if vals else np.full((m, 1), -np.inf)
            V = np.where(np.isnan(V), np.inf, V)
            return V.max(axis=1)

    def contains_batch(self, X, tol: float = MEMBER_TOL) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        scale = 1.0 + np.abs(X).max(axis=1)
        return self.violation(X) <= tol * scale

    def contains(self, x, tol: float = MEMBER_TOL) -> bool:
        return bool(self.contains_batch(np.asarray(x, float)[None, :], tol)[0])

    def on_boundary_batch(self, X, tol: float = 1e-9) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        v = self.violation(X)
        return np.abs(v) <= tol * (1.0 + np.abs(X).max(axis=1))

    def is_convex(self) -> bool:
        if self.kind in ("whole", "halfspace", "polyhedron", "ball"):
            return True
        if self.kind == "product":
            return all(p.is_convex() for p in self.parts)
        return not self.h and all(E.CONVEX in gi.class_tags for gi in self.g)

    def is_bounded(self) -> bool | None:
        """True/False when decidable in closed form, None otherwise."""
        if self.kind == "ball":
            return True
        if self.kind in ("whole", "halfspace"):
            return False
        if self.kind == "polyhedron":
            from .polyhedral import polyhedron_unbounded
            return not polyhedron_unbounded(self.A, self.b)
        if self.kind == "product":
            flags = [p.is_bounded() for p in self.parts]
            if any(f is False for f in flags):
                return False
            return True if all(f is True for f in flags) else None
        return None

    def __str__(self):
        return self.text or self.name or f"SetSpec({self.kind}, dim={self.dim})"


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def whole_space(dim: int) -> SetSpec:
    return SetSpec(dim, "whole", text=f"R^{dim}")


def halfspace(a: Sequence[float], beta: float) -> SetSpec:
    """{x : a.x <= beta}."""
    a = np.asarray(a, float)
    if not np.any(a):
        raise SemanticError("halfspace normal must be nonzero")
    return SetSpec(len(a), "halfspace", A=a[None, :], b=np.array([float(beta)]),
                   text=f"halfspace({', '.join(map(repr, a.tolist()))}; {beta!r})")


def polyhedron(A, b) -> SetSpec:
    """{x : A x <= b}."""
    A = np.atleast_2d(np.asarray(A, float))
    b = np.asarray(b, float).reshape(-1)
    if A.shape[0] != b.shape[0]:
        raise SemanticError("A and b disagree")
    if np.any(_norm(A, axis=1) == 0):
        raise SemanticError("zero row in polyhedron")
    if A.shape[0] == 1:
        return halfspace(A[0], b[0])
    return SetSpec(A.shape[1], "polyhedron", A=A, b=b)


def ball(center: Sequence[float], radius: float) -> SetSpec:
    c = np.asarray(center, float)
    if radius < 0:
        raise SemanticError("negative radius")
    return SetSpec(len(c), "ball", center=c, radius=float(radius),
                   text=f"ball({', '.join(map(repr, c.tolist()))}; {float(radius)!r})")


def constraint_system(g: Sequence[E.FunctionSpec], h: Sequence[E.FunctionSpec] = (),
                      dim: int | None = None, text: str = "", name: str | None = None,
                      anchor=None) -> SetSpec:
    fs = list(g) + list(h)
    if dim is None:
        if not fs:
            raise SemanticError("dimension needed for an empty constraint system")
        dim = fs[0].dim
    if any(f.dim != dim for f in fs):
        raise SemanticError("constraint dimension mismatch")
    if not fs:
        return whole_space(dim)
    return SetSpec(dim, "constraints", g=tuple(g), h=tuple(h), text=text, name=name, anchor=anchor)


def product(S1: SetSpec, S2: SetSpec) -> SetSpec:
    return SetSpec(S1.dim + S2.dim, "product", parts=(S1, S2), text=f"({S1}) x ({S2})")


def epigraph(f: E.FunctionSpec) -> SetSpec:
    """epi f = {(x, t) : f(x) <= t} in R^{n+1}."""
    n = f.dim
    lifted = E.embed(f, n + 1)
    t = E.make_function(E.var(n), n + 1, validate=False)
    g = E.make_function(E.Node("sub", (lifted.root, t.root)), n + 1, validate=False)

    def anchor(X):
        return E.eval_batch(f, X[:, :n])

    return SetSpec(n + 1, "constraints", g=(g,), text=f"epi({f})", anchor=anchor)


# ---------------------------------------------------------------------------
# set DSL
# ---------------------------------------------------------------------------

_SET_RE = re.compile(r"^\s*set\s*\{(?P<body>.*)\}\s*$", re.S)


def _split_top(text: str, sep: str):
    out, depth, cur = [], 0, []
    for ch in text:
        if ch in "({":
            depth += 1
        elif ch in ")}":
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return out


def _constraint(text: str, dim: int, equality: bool, sets=None) -> E.FunctionSpec:
    t = text.strip()
    m = re.search(r"(<=|>=|=)", t)
    if m:
        op = m.group(1)
        lhs, rhs = t[:m.start()], t[m.end():]
        if equality and op != "=":
            raise DSLSyntaxError(f"equality expected in {t!r}")
        if not equality and op == "=":
            raise DSLSyntaxError(f"inequality expected in {t!r}")
        L = E.parse_expr(lhs, dim, sets)
        R = E.parse_expr(rhs, dim, sets)
        node = E.Node("sub", (R, L)) if op == ">=" else E.Node("sub", (L, R))
        canon = f"({rhs.strip()}) - ({lhs.strip()})" if op == ">=" else f"({lhs.strip()}) - ({rhs.strip()})"
    else:
        node = E.parse_expr(t, dim, sets)
        canon = t
    return E.make_function(node, dim, text=canon, validate=False)


def parse_set(text: str, dim: int, sets=None) -> SetSpec:
    """Parse a set description.

    Accepted forms: ``set { g: c1, c2; h: e1; }``, ``R^n`` / ``whole``,
    ``ball(c1, ..., cn; r)``, ``halfspace(a1, ..., an; beta)`` and a polyhedral
    conjunction such as ``x1 >= 0 & x2 <= 1``.
    """
    t = text.strip()
    m = _SET_RE.match(t)
    if m:
        g, h = [], []
        for section in _split_top(m.group("body"), ";"):
            section = section.strip()
            if not section:
                continue
            if ":" not in section:
                raise DSLSyntaxError(f"section {section!r} lacks a label")
            label, body = section.split(":", 1)
            label = label.strip()
            if label not in ("g", "h"):
                raise DSLSyntaxError(f"unknown section {label!r}")
            for item in _split_top(body, ","):
                if item.strip():
                    (h if label == "h" else g).append(_constraint(item, dim, label == "h", sets))
        S = constraint_system(g, h, dim=dim, text=t)
        if S.kind == "whole":
            return SetSpec(dim, "whole", text=t)
        return S
    if t in ("whole", f"R^{dim}", "R"):
        return SetSpec(dim, "whole", text=t)
    mb = re.match(r"^(ball|halfspace)\s*\((.*);(.*)\)$", t)
    if mb:
        vec = [float(v) for v in mb.group(2).split(",")]
        val = float(mb.group(3))
        if len(vec) != dim:
            raise SemanticError("vector length does not match dimension")
        return ball(vec, val) if mb.group(1) == "ball" else halfspace(vec, val)
    try:
        parser = E._Parser(t, dim, sets)
        guard = parser.guard()
        if parser.peek()[0] != "end":
            raise DSLSyntaxError(f"trailing input at {parser.peek()[2]}")
    except (DSLSyntaxError, SemanticError) as exc:
        raise DSLSyntaxError(f"cannot parse set {t!r}: {exc}") from exc
    A = np.array([q.coeffs for q in guard])
    b = -np.array([q.const for q in guard])
    S = polyhedron(A, b)
    return SetSpec(S.dim, S.kind, A=S.A, b=S.b, text=t)


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def _proj_polyhedron(A, b, X):
    """Exact projection onto {A y <= b} by active-set enumeration (small row counts)."""
    m, n = X.shape
    k = A.shape[0]
    inside = (X @ A.T - b <= 1e-12 * (1 + np.abs(X).max(axis=1))[:, None]).all(axis=1)
    Y = X.copy()
    best = np.where(inside, 0.0, np.inf)
    todo = ~inside
    if not todo.any():
        return Y
    for s in range(1, min(k, n) + 1):
        for S in itertools.combinations(range(k), s):
            AS = A[list(S)]
            G = AS @ AS.T
            if np.linalg.matrix_rank(G) < s:
                continue
            Gi = np.linalg.inv(G)
            lam = (X[todo] @ AS.T - b[list(S)]) @ Gi.T
            Yc = X[todo] - lam @ AS
            ok = (lam >= -1e-12).all(axis=1) & (Yc @ A.T - b <= 1e-9 * (1 + np.abs(Yc).max(axis=1))[:, None]).all(axis=1)
            d = _norm(X[todo] - Yc, axis=1)
            idx = np.flatnonzero(todo)
            better = ok & (d < best[idx])
            Y[idx[better]] = Yc[better]
            best[idx[better]] = d[better]
    if np.isinf(best).any():
        raise ProjectionFailed("polyhedron appears empty")
    return Y


def _phi(S: SetSpec, X, signs=None):
    """Membership function for ray shooting: <= 0 means inside."""
    if S.kind != "constraints":
        return S.violation(X)
    with np.errstate(all="ignore"):
        cols = [E.eval_batch(gi, X) for gi in S.g]
        for j, hj in enumerate(S.h):
            v = E.eval_batch(hj, X)
            s = 1.0 if signs is None else signs[:, j]
            cols.append(s * v)
        V = np.column_stack(cols)
        V = np.where(np.isnan(V), np.inf, V)
        return V.max(axis=1)


def _shoot(S, X, D, tmax, signs=None, n_lin=32, n_geo=40, iters=60):
    """First boundary crossing along x + t d, t in (0, tmax].

    X: (m, n) origins, D: (m, n) unit directions, tmax: (m,). Returns t (inf if none).
    """
    m, n = X.shape
    fr = np.concatenate([2.0 ** -np.arange(n_geo, 0, -1), np.linspace(0, 1, n_lin + 1)[1:]])
    fr = np.unique(fr)
    T = tmax[:, None] * fr[None, :]
    P = X[:, None, :] + T[..., None] * D[:, None, :]
    sg = None if signs is None else np.repeat(signs, len(fr), axis=0)
    phi = _phi(S, P.reshape(-1, n), sg).reshape(m, len(fr))
    hit = phi <= 0
    any_hit = hit.any(axis=1)
    first = np.argmax(hit, axis=1)
    t_hi = np.where(any_hit, T[np.arange(m), first], np.inf)
    t_lo = np.where(first > 0, T[np.arange(m), np.maximum(first - 1, 0)], 0.0)
    idx = np.flatnonzero(any_hit)
    if len(idx):
        lo, hi = t_lo[idx], t_hi[idx]
        Xi, Di = X[idx], D[idx]
        si = None if signs is None else signs[idx]
        hi = _refine_crossing(S, Xi, Di, si, lo, hi, iters)
        t_hi[idx] = hi
    return t_hi


def _refine_crossing(S, Xi, Di, si, lo, hi, iters):
    """Shrink brackets [lo, hi] (outside at lo, inside at hi) to the boundary crossing.

    Chandrupatla's method does the bulk of the work; plain bisection finishes
    any bracket it could not certify (kinks, infinite values).
    """
    n = Xi.shape[1]
    k = 0 if si is None else si.shape[1]
    big = np.finfo(float).max / 4

    def phi(t, *cols):
        P = np.stack([cols[i] + t * cols[n + i] for i in range(n)], axis=-1)
        sg = None if k == 0 else np.stack(cols[2 * n:], axis=-1)
        v = _phi(S, P.reshape(-1, n), None if sg is None else sg.reshape(-1, k)).reshape(t.shape)
        return np.clip(v, -big, big)

    cols = tuple(Xi.T) + tuple(Di.T) + (() if si is None else tuple(si.T))
    lo_phi = phi(lo, *cols)
    usable = (lo < hi) & (lo_phi > 0)
    if usable.any():
        sub = tuple(c[usable] for c in cols)
        with np.errstate(all="ignore"):
            res = elementwise.find_root(phi, (lo[usable], hi[usable]), args=sub,
                                        tolerances=dict(xatol=1e-300, xrtol=1e-15))
        ok = res.success & np.isfinite(res.x)
        # keep the inside endpoint of the final bracket
        xl, xr = res.bracket
        fl, fr = res.f_bracket
        r_hi = np.where(res.f_x <= 0, res.x, np.where(fr <= 0, xr, xl))
        ins = phi(r_hi, *sub) <= 0
        good = ok & ins
        u = np.flatnonzero(usable)
        hi = hi.copy()
        lo = lo.copy()
        hi[u[good]] = r_hi[good]
        lo[u[good]] = r_hi[good]
    todo = np.flatnonzero(hi - lo > 1e-15 * (1 + hi))
    if len(todo):
        lo_t, hi_t = lo[todo], hi[todo]
        Xt, Dt = Xi[todo], Di[todo]
        st = None if si is None else si[todo]
        for _ in range(iters):
            mid = 0.5 * (lo_t + hi_t)
            inside = _phi(S, Xt + mid[:, None] * Dt, st) <= 0
            hi_t = np.where(inside, mid, hi_t)
            lo_t = np.where(inside, lo_t, mid)
            if np.all(hi_t - lo_t <= 1e-15 * (1 + hi_t)):
                break
        hi[todo] = hi_t
    return hi


def _active_normal(S: SetSpec, Y, signs=None):
    """Outward unit normal of the most active constraint at boundary points Y."""
    m, n = Y.shape
    cands = []
    for gi in S.g:
        v, G, dom, kink = E.grad_batch(gi, Y)
        cands.append((v, G))
    for j, hj in enumerate(S.h):
        v, G, dom, kink = E.grad_batch(hj, Y)
        s = np.ones(m) if signs is None else signs[:, j]
        cands.append((s * v, s[:, None] * G))
    V = np.column_stack([c[0] for c in cands])
    V = np.where(np.isnan(V), -np.inf, V)
    j = np.argmax(V, axis=1)
    G = np.stack([c[1] for c in cands], axis=1)[np.arange(m), j]
    return safe_normalize(G)


def _tangential(S: SetSpec, Y, W, signs=None):
    """Residual of W after removing its projection onto the normal cone at Y.

    Smooth points use the most active gradient. At kinks the cone is spanned
    by the gradients of all nearly active pieces, probed on both sides of Y.
    """
    m, n = Y.shape
    Nrm = _active_normal(S, Y, signs)
    WT = W - np.einsum("ij,ij->i", W, Nrm)[:, None] * Nrm
    if S.kind != "constraints":
        return WT
    funcs = [(gi, np.ones(m)) for gi in S.g]
    funcs += [(hj, np.ones(m) if signs is None else signs[:, j]) for j, hj in enumerate(S.h)]
    scale = 1.0 + _norm(Y, axis=1)
    vals = [sg * E.eval_batch(fn, Y) for fn, sg in funcs]
    V = np.nan_to_num(np.column_stack(vals), nan=-np.inf)
    active = V >= -1e-9 * scale[:, None]
    eta = 1e-7 * scale
    probes = np.vstack([np.zeros(n), np.eye(n), -np.eye(n)])
    k = len(probes)
    Gs = np.full((m, len(funcs) * k, n), np.nan)
    for c, (fn, sg) in enumerate(funcs):
        on = np.flatnonzero(active[:, c])
        if not len(on):
            continue
        with np.errstate(all="ignore"):
            P = (Y[on, None, :] + eta[on, None, None] * probes[None, :, :]).reshape(-1, n)
            _, G, _, _ = E.grad_batch(fn, P)
        G = G.reshape(len(on), k, n) * sg[on, None, None]
        nrm = _norm(G.reshape(-1, n), axis=1).reshape(len(on), k)
        ok = np.isfinite(nrm) & (nrm > 0)
        Gs[on, c * k:(c + 1) * k] = np.where(ok[..., None], G / np.where(ok, nrm, 1.0)[..., None], np.nan)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spread = np.nanmax(Gs, axis=1) - np.nanmin(Gs, axis=1)
    rows = np.flatnonzero(np.nan_to_num(spread, nan=0.0).max(axis=1) > 1e-9)
    for i in rows:
        Gk = Gs[i][np.all(np.isfinite(Gs[i]), axis=1)]
        lam, _ = nnls(Gk.T, W[i])
        WT[i] = W[i] - Gk.T @ lam
    return WT


def _slide(S, X, Y, signs=None, iters=25):
    """Move boundary points Y toward the foot of the normal from X.

    Each step displaces Y along the tangential part of X - Y by a few trial
    multiples, re-snaps to the boundary by shooting from X, and keeps the best.
    """
    m, n = X.shape
    Y = Y.copy()
    d = _norm(X - Y, axis=1)
    active = np.isfinite(d) & (d > 0)
    alpha = np.ones(m)
    mults = np.array([0.125, 0.5, 1.0, 2.0, 8.0])
    k = len(mults)
    for _ in range(iters):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        sg = None if signs is None else signs[idx]
        W = X[idx] - Y[idx]
        WT = _tangential(S, Y[idx], W, sg)
        res = _norm(WT, axis=1)
        done = res <= 1e-13 * (1 + _norm(W, axis=1)) + 1e-300
        A = alpha[idx, None] * mults[None, :]
        Z = Y[idx, None, :] + A[..., None] * WT[:, None, :]
        Dz = (Z - X[idx, None, :]).reshape(-1, n)
        nz = _norm(Dz, axis=1)
        Dz = Dz / np.where(nz == 0, 1.0, nz)[:, None]
        Xr = np.repeat(X[idx], k, axis=0)
        t = _shoot(S, Xr, Dz, 2.0 * nz + 1e-300, None if sg is None else np.repeat(sg, k, axis=0),
                   n_lin=16, n_geo=20, iters=60)
        t = np.where(np.isfinite(t), t, np.inf).reshape(-1, k)
        j = np.argmin(t, axis=1)
        dnew = t[np.arange(len(idx)), j]
        Ynew = X[idx] + np.where(np.isfinite(dnew), dnew, 0.0)[:, None] * Dz.reshape(-1, k, n)[np.arange(len(idx)), j]
        improve = (dnew < d[idx]) & ~done
        gain = d[idx] - np.minimum(dnew, d[idx])
        Y[idx[improve]] = Ynew[improve]
        d[idx[improve]] = dnew[improve]
        alpha[idx[improve]] = np.clip(A[np.arange(len(idx)), j][improve], 1e-9, 1e9)
        alpha[idx[~improve]] *= 0.01
        stop = done | (alpha[idx] < 1e-9) | (improve & (gain <= 1e-15 * (1 + d[idx])))
        active[idx[stop]] = False
    return Y, d


def _shoot_dirs(n: int) -> np.ndarray:
    """Eight or more multistart directions: axes and diagonals."""
    dirs = [np.eye(n), -np.eye(n)]
    if n >= 2:
        signs = np.array(list(itertools.product([-1.0, 1.0], repeat=n)))
        dirs.append(signs / np.sqrt(n))
    D = np.vstack(dirs)
    if len(D) < 8:
        D = np.vstack([D, spiral_directions(n, 8 - len(D) + 2)[: 8 - len(D)]])
    return D


def project_batch(S: SetSpec, X, cap=None, refine: bool = True, n_best: int = 1):
    """Nearest points of S for each row of X.

    Parameters
    ----------
    cap : array or None
        Per-row bound on the search radius; rows with no boundary within the cap
        return NaN and distance inf.

    Returns
    -------
    Y : (m, n) array, d : (m,) distances
    """
    X = np.atleast_2d(np.asarray(X, float))
    m, n = X.shape
    if S.kind == "whole":
        return X.copy(), np.zeros(m)
    if S.kind in ("halfspace", "polyhedron"):
        if S.kind == "halfspace":
            a, beta = S.A[0], S.b[0]
            Y = X - (np.maximum(X @ a - beta, 0.0) / (a @ a))[:, None] * a
        else:
            Y = _proj_polyhedron(S.A, S.b, X)
        return _apply_cap(X, Y, cap)
    if S.kind == "ball":
        V = X - S.center
        r = _norm(V, axis=1)
        out = r > S.radius
        Y = X.copy()
        Y[out] = S.center + S.radius * V[out] / r[out, None]
        return _apply_cap(X, Y, cap)
    if S.kind == "product":
        Ys, k = [], 0
        for p in S.parts:
            Yp, _ = project_batch(p, X[:, k:k + p.dim], None, refine)
            Ys.append(Yp)
            k += p.dim
        Y = np.hstack(Ys)
        return _apply_cap(X, Y, cap)
    return _project_constraints(S, X, cap, refine)


def _apply_cap(X, Y, cap):
    d = _norm(X - Y, axis=1)
    if cap is not None:
        bad = d > np.asarray(cap) * (1 + 1e-12)
        Y = Y.copy()
        Y[bad] = np.nan
        d = np.where(bad, np.inf, d)
    return Y, d


def _project_constraints(S, X, cap, refine, chunk=4096):
    m, n = X.shape
    Y = np.full((m, n), np.nan)
    dist = np.full(m, np.inf)
    inside = S.contains_batch(X)
    Y[inside] = X[inside]
    dist[inside] = 0.0
    rows = np.flatnonzero(~inside)
    if not len(rows):
        return Y, dist
    signs = None
    if S.h:
        with np.errstate(all="ignore"):
            signs = np.column_stack([np.sign(E.eval_batch(hj, X)) for hj in S.h])
        signs = np.where(signs == 0, 1.0, np.nan_to_num(signs, nan=1.0))
    D = _shoot_dirs(n)
    for start in range(0, len(rows), chunk):
        r = rows[start:start + chunk]
        Xr = X[r]
        k = len(r)
        if cap is None:
            tmax = 4.0 * (1.0 + np.abs(Xr).max(axis=1))
        else:
            tmax = np.asarray(cap, float)[r]
        sg = None if signs is None else signs[r]
        best_t = np.full(k, np.inf)
        best_y = np.full((k, n), np.nan)
        for attempt in range(8):
            todo = ~np.isfinite(best_t)
            if not todo.any():
                break
            Xi = np.repeat(Xr[todo], len(D), axis=0)
            Di = np.tile(D, (int(todo.sum()), 1))
            ti = np.repeat(tmax[todo], len(D))
            si = None if sg is None else np.repeat(sg[todo], len(D), axis=0)
            t = _shoot(S, Xi, Di, ti, si).reshape(-1, len(D))
            j = np.argmin(t, axis=1)
            tb = t[np.arange(len(t)), j]
            idx = np.flatnonzero(todo)
            best_t[idx] = tb
            best_y[idx] = Xr[todo] + np.where(np.isfinite(tb), tb, 0.0)[:, None] * D[j]
            if cap is not None:
                break
            tmax = np.where(np.isfinite(best_t), tmax, tmax * 16.0)
        found = np.isfinite(best_t)
        if refine and found.any():
            f = np.flatnonzero(found)
            Yr, dr = _slide(S, Xr[f], best_y[f], None if sg is None else sg[f])
            best_y[f] = Yr
            best_t[f] = dr
        if cap is not None:
            over = best_t > tmax * (1 + 1e-12)
            best_t[over] = np.inf
            best_y[over] = np.nan
        Y[r] = best_y
        dist[r] = best_t
    return Y, dist


def project(S: SetSpec, x) -> list:
    """Nearest points of S to x (several when the projection is not unique)."""
    x = np.asarray(x, float).reshape(-1)
    if x.shape[0] != S.dim:
        raise SemanticError("dimension mismatch")
    if S.kind != "constraints":
        Y, d = project_batch(S, x[None, :])
        if not np.all(np.isfinite(Y)):
            raise ProjectionFailed("projection failed")
        return [Y[0]]
    if S.contains(x):
        return [x.copy()]
    D = _shoot_dirs(S.dim)
    signs = None
    if S.h:
        signs = np.sign([E.evaluate(hj, x) for hj in S.h])[None, :]
        signs = np.where(signs == 0, 1.0, signs)
    Xi = np.repeat(x[None, :], len(D), axis=0)
    tmax = np.full(len(D), 4.0 * (1.0 + np.abs(x).max()))
    si = None if signs is None else np.repeat(signs, len(D), axis=0)
    for _ in range(8):
        t = _shoot(S, Xi, D, tmax, si)
        if np.isfinite(t).any():
            break
        tmax = tmax * 16.0
    ok = np.isfinite(t)
    if not ok.any():
        raise ProjectionFailed(f"no boundary point found from {x.tolist()}")
    Y0 = Xi[ok] + t[ok, None] * D[ok]
    Y, d = _slide(S, Xi[ok], Y0, None if si is None else si[ok], iters=200)
    best = d.min()
    if not np.isfinite(best):
        raise ProjectionFailed("descent did not converge")
    order = np.argsort(d)
    near = Y[order][d[order] <= best + 1e-9 * (1 + best)]
    return [y for y in dedup(near, 1e-3)]


def distance(S: SetSpec, X) -> np.ndarray:
    _, d = project_batch(S, X)
    return d


# ---------------------------------------------------------------------------
# pointwise normal cones
# ---------------------------------------------------------------------------

def normal_cone_at(S: SetSpec, x, tol: float = 1e-8) -> LimitSet:
    """Limiting normal cone at a point of S."""
    x = np.asarray(x, float).reshape(-1)
    n = S.dim
    if not S.contains(x, tol):
        raise NotInSet(f"{x.tolist()} is not in the set")
    scale = 1.0 + np.abs(x).max()
    if S.kind == "whole":
        return LimitSet.zero_cone(n)
    if S.kind in ("halfspace", "polyhedron"):
        act = np.abs(S.A @ x - S.b) <= tol * scale
        if not act.any():
            return LimitSet.zero_cone(n)
        return LimitSet.cone(S.A[act], n, convex=True)
    if S.kind == "ball":
        v = x - S.center
        if abs(_norm(v) - S.radius) > tol * scale:
            return LimitSet.zero_cone(n)
        if S.radius == 0:
            return LimitSet.cone(np.vstack([np.eye(n), -np.eye(n)]), n, convex=True)
        return LimitSet.cone(v[None, :], n, convex=True)
    if S.kind == "product":
        cones, k = [], 0
        for p in S.parts:
            cones.append(normal_cone_at(p, x[k:k + p.dim], tol))
            k += p.dim
        return product_limitset(cones[0], cones[1])
    gens = []
    smooth = True
    for gi in S.g:
        v, G, dom, kink = E.grad_batch(gi, x[None, :])
        if abs(v[0]) <= tol * scale:
            if kink[0] or not np.all(np.isfinite(G[0])):
                smooth = False
            gens.append(G[0])
    eq = []
    for hj in S.h:
        v, G, dom, kink = E.grad_batch(hj, x[None, :])
        if kink[0] or not np.all(np.isfinite(G[0])):
            smooth = False
        eq.append(G[0])
    allg = np.array(gens + eq) if (gens or eq) else np.zeros((0, n))
    qualified = smooth and _mfcq(np.array(gens).reshape(-1, n), np.array(eq).reshape(-1, n))
    if qualified:
        if not len(allg):
            return LimitSet.zero_cone(n)
        rays = list(gens) + eq + [-e for e in eq]
        return LimitSet.cone(np.array(rays), n, convex=True)
    return sampled_normal_cone(S, x)


def _mfcq(Gi: np.ndarray, He: np.ndarray) -> bool:
    """Mangasarian-Fromovitz: He independent and a direction strictly decreasing active g."""
    n = Gi.shape[1] if len(Gi) else He.shape[1] if len(He) else 0
    if len(He) and np.linalg.matrix_rank(He) < len(He):
        return False
    if not len(Gi):
        return True
    if np.any(_norm(Gi, axis=1) == 0):
        return False
    from scipy.optimize import linprog
    # find d with Gi d <= -1, He d = 0
    res = linprog(np.zeros(n), A_ub=Gi, b_ub=-np.ones(len(Gi)),
                  A_eq=He if len(He) else None, b_eq=np.zeros(len(He)) if len(He) else None,
                  bounds=[(None, None)] * n, method="highs")
    return res.status == 0


def sampled_normal_cone(S: SetSpec, x, radii=(1e-3, 1e-4, 1e-5), k: int = 256, tol: float = 0.02) -> LimitSet:
    """cone(x' - proj(x')) over x' in shrinking balls around x; rays persisting at all radii."""
    n = S.dim
    dirs = spiral_directions(n, k) if n > 1 else np.array([[-1.0], [1.0]])
    per_radius = []
    for r in radii:
        Xp = x + r * dirs
        Y, d = project_batch(S, Xp, cap=np.full(len(Xp), 2 * r))
        ok = np.isfinite(d) & (d > 1e-14)
        U = safe_normalize(Xp[ok] - Y[ok]) if ok.any() else np.zeros((0, n))
        per_radius.append(U)
    if not len(per_radius[-1]):
        return LimitSet.zero_cone(n)
    keep = []
    for u in dedup(per_radius[-1], tol / 2):
        if all(len(U) and np.min(_norm(U - u, axis=1)) <= tol for U in per_radius):
            keep.append(u)
    from .limitset import cluster
    rays, _ = cluster(np.array(keep), tol, unit=True) if keep else (np.zeros((0, n)), None)
    return LimitSet.cone(rays, n) if len(rays) else LimitSet.zero_cone(n)


def product_limitset(A: LimitSet, B: LimitSet) -> LimitSet:
    """Cartesian product of two cones in union form."""
    na, nb = A.dim, B.dim
    ra = [np.zeros(na)] + list(A.rays)
    rb = [np.zeros(nb)] + list(B.rays)
    rays = []
    for u in ra:
        for v in rb:
            w = np.concatenate([u, v])
            if _norm(w) > 0:
                rays.append(w)
    if A.convex and B.convex:
        gens = [np.concatenate([u, np.zeros(nb)]) for u in A.rays] + \
               [np.concatenate([np.zeros(na), v]) for v in B.rays]
        return LimitSet.cone(np.array(gens).reshape(-1, na + nb), na + nb, convex=True) if gens \
            else LimitSet.zero_cone(na + nb)
    if not rays:
        return LimitSet.zero_cone(na + nb)
    # t*u + s*v for independent t, s >= 0 spans a planar sector per pair
    from .limitset import _sector_rays
    out = []
    for u in ra:
        for v in rb:
            gu = [np.concatenate([u, np.zeros(nb)])] if _norm(u) else []
            gv = [np.concatenate([np.zeros(na), v])] if _norm(v) else []
            G = np.array(gu + gv).reshape(-1, na + nb)
            if len(G):
                out.append(_sector_rays(G, 0.01))
    return LimitSet.cone(np.vstack(out), na + nb)
