"""Escape sampling at growing radii and persistence filtering of limit directions.

Samples at level radius r have ||x_J|| = r on an escaping block J of the index
set I. The remaining coordinates run over multi-scale grids so that curved
sets whose boundary drifts (x2 = 1/x1, x1 = log x2, ...) stay within reach.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .limitset import SamplingPlan, cluster, spiral_directions

SCALE_C = (0.25, 0.5, 1.0, 2.0)
BOUNDED_P = (-2.0, -1.0, -0.5, 0.5)
FREE_P = (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)
DENSE = tuple(np.round(np.arange(0.25, 3.0001, 0.25), 2))
LOG_DECADES = tuple(range(0, 308))
ANCHOR_REL = (1e-9, 1e-6, 1e-3, 0.1, 0.5, 0.9)
ANCHOR_ABS = (1e-3, 0.1, 1.0, 10.0)


def _signed(vals):
    v = np.asarray(sorted(set(vals)), float)
    return np.concatenate([[0.0], v, -v])


def bounded_values(r: float) -> np.ndarray:
    """Magnitudes for coordinates of I that are not escaping in this sample block."""
    mags = [c * r ** p for c in SCALE_C for p in BOUNDED_P] + list(DENSE)
    return _signed(mags)


def free_values(r: float, full: bool = True) -> np.ndarray:
    """Magnitudes for coordinates outside I (unrestricted growth)."""
    mags = [c * r ** p for c in SCALE_C for p in FREE_P] + list(DENSE)
    if full:
        mags += [10.0 ** j for j in LOG_DECADES]
    return _signed(mags)


def anchor_offsets(a: np.ndarray, r: float) -> np.ndarray:
    """Offsets around an anchor value a (the graph height for epigraphs); shape (m, k)."""
    a = np.asarray(a, float)
    absolute = [c * r ** p for c in (0.5, 1.0, 2.0) for p in (-1.0, 0.0, 0.5, 1.0)] + list(ANCHOR_ABS)
    absolute = np.asarray(sorted(set(absolute)))
    rel = np.abs(a)[:, None] * np.asarray(ANCHOR_REL)[None, :]
    base = np.broadcast_to(absolute, (len(a), len(absolute)))
    off = np.concatenate([np.zeros((len(a), 1)), base, -base, rel, -rel], axis=1)
    return off


def _block_values(q: int, vals: np.ndarray, k: int = 8) -> np.ndarray:
    """Points of R^q built from a scalar value grid."""
    if q == 0:
        return np.zeros((1, 0))
    if q == 1:
        return vals[:, None]
    mags = np.unique(np.abs(vals[vals != 0]))
    dirs = np.vstack([spiral_directions(q, k), np.eye(q), -np.eye(q)])
    pts = (mags[:, None, None] * dirs[None, :, :]).reshape(-1, q)
    return np.vstack([np.zeros((1, q)), pts])


@dataclass
class LevelSamples:
    r: float
    X: np.ndarray
    group: np.ndarray
    pi_norm: np.ndarray


def group_keys(dim: int, I, plan: SamplingPlan):
    """Stable list of (J, base direction) pairs; index = group id."""
    keys = []
    for s in range(1, len(I) + 1):
        for J in itertools.combinations(I, s):
            nb = 2 if s == 1 else plan.dirs_per_level
            keys += [(J, b) for b in range(nb)]
    return keys


def escape_samples(dim: int, I, r: float, plan: SamplingPlan, anchor=None,
                   max_block: int = 20000, group_plan: SamplingPlan | None = None) -> LevelSamples:
    """Samples with ||pi_I(x)|| >= r, grouped by escaping block and base direction.

    anchor: optional callable giving the last coordinate's reference value from
    the first dim-1 coordinates (used for epigraphs, where the height is tied to
    the function value). Only used when the last coordinate is outside I.
    group_plan: when given, samples are grouped by the nearest base direction of
    that plan, so a denser resampling stays comparable with other levels.
    """
    gp = group_plan or plan
    I = tuple(sorted(I))
    outside = [i for i in range(dim) if i not in I]
    anchored = anchor is not None and (dim - 1) in outside
    free_idx = [i for i in outside if not (anchored and i == dim - 1)]
    Xs, Gs = [], []
    gid = 0
    for s in range(1, len(I) + 1):
        for J in itertools.combinations(I, s):
            rest = [i for i in I if i not in J]
            base = np.array([[-1.0], [1.0]]) if s == 1 else spiral_directions(s, plan.dirs_per_level, plan.seed)
            gbase = np.array([[-1.0], [1.0]]) if s == 1 else spiral_directions(s, gp.dirs_per_level, gp.seed)
            gmap = np.argmin(np.linalg.norm(base[:, None, :] - gbase[None, :, :], axis=2), axis=1)
            Bv = _block_values(len(rest), bounded_values(r))
            full = len(rest) == 0 and len(free_idx) <= 1
            Fv = _block_values(len(free_idx), free_values(r, full=full))
            if len(Bv) * len(Fv) > max_block:
                Fv = _block_values(len(free_idx), free_values(r, full=False))
            comb = np.array([np.concatenate([b, f]) for b in Bv for f in Fv]) if len(Bv) * len(Fv) else np.zeros((1, 0))
            for bi, d in enumerate(base):
                m = len(comb)
                X = np.zeros((m, dim))
                X[:, list(J)] = r * d
                X[:, rest + free_idx] = comb
                if anchored:
                    with np.errstate(all="ignore"):
                        a = anchor(X[:, :dim - 1])
                    ok = np.isfinite(a)
                    a = np.where(ok, a, 0.0)
                    off = anchor_offsets(a, r)
                    X = np.repeat(X, off.shape[1], axis=0)
                    with np.errstate(over="ignore"):
                        X[:, dim - 1] = (a[:, None] + off).reshape(-1)
                    keep = np.repeat(ok, off.shape[1]) | (np.arange(len(X)) % off.shape[1] == 0)
                    X = X[keep]
                Xs.append(X)
                Gs.append(np.full(len(X), gid + gmap[bi]))
            gid += len(gbase)
    X = np.vstack(Xs)
    G = np.concatenate(Gs)
    pn = np.linalg.norm(X[:, list(I)], axis=1)
    return LevelSamples(r, X, G, pn)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

OK, EMPTY, OVERFLOW = "ok", "empty", "overflow"


@dataclass
class LevelRecord:
    """Per-group outcome at one level: status and unit directions observed."""
    r: float
    status: dict = field(default_factory=dict)
    dirs: dict = field(default_factory=dict)


def record_level(r, groups, U, valid, skip_groups, n_groups) -> LevelRecord:
    """Collect vectors U[valid] by group; groups in skip_groups without data are skipped levels."""
    rec = LevelRecord(r)
    for g in range(n_groups):
        rec.status[g] = EMPTY
    for g in np.unique(np.asarray(skip_groups, int)):
        rec.status[int(g)] = OVERFLOW
    gv = groups[valid]
    if valid.any():
        Uv = U[valid]
        order = np.argsort(gv, kind="stable")
        gv, Uv = gv[order], Uv[order]
        bounds = np.flatnonzero(np.diff(gv)) + 1
        for chunk_g, chunk_u in zip(np.split(gv, bounds), np.split(Uv, bounds)):
            g = int(chunk_g[0])
            rec.status[g] = OK
            rec.dirs[g] = chunk_u
    return rec


def persistent_directions(records, plan: SamplingPlan, dim: int, unit: bool = True):
    """Directions recurring within cluster_tol at each of a group's last m informative levels.

    A level counts as informative for a group unless its samples overflowed the
    floating-point range there. Returns (directions, per-group summary).
    """
    m = plan.stability_window
    tol = plan.cluster_tol
    groups = sorted({g for rec in records for g in rec.status})
    keep, summary = [], []
    for g in groups:
        window = [rec for rec in records if rec.status.get(g) != OVERFLOW][-m:]
        if len(window) < m or any(rec.status.get(g) != OK for rec in window):
            continue
        last = window[-1].dirs[g]
        cands, _ = cluster(last, tol / 2, unit=unit)
        for u in cands:
            if all(np.min(np.linalg.norm(rec.dirs[g] - u, axis=1)) <= tol for rec in window[:-1]):
                keep.append(u)
                summary.append({"group": g, "dir": u, "levels": [rec.r for rec in window]})
    if not keep:
        return np.zeros((0, dim)), summary
    reps, _ = cluster(np.array(keep), tol, unit=unit)
    return reps, summary
