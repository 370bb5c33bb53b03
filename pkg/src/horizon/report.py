"""Report serialization, verdict collection and plot-data export (CSV plus Agg PNG)."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .certificate import _plain
from .errors import DimensionTooHigh
from .limitset import DEFAULT_T, LimitSet

SCHEMA = "horizon/1"
VERDICTS = ("Holds", "Fails", "Inconclusive")
SET_KEYS = ("cone", "limiting", "bound", "hull", "subdiff", "singular")


def to_json(report: dict) -> str:
    """Canonical JSON: sorted keys, fixed indentation, so equal inputs give equal bytes."""
    return json.dumps(_plain(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def collect_verdicts(obj) -> list:
    """Every verdict string found under a 'verdict' key, depth first."""
    out = []
    if isinstance(obj, dict):
        for k in sorted(obj):
            v = obj[k]
            if k == "verdict" and isinstance(v, str) and v in VERDICTS:
                out.append(v)
            else:
                out += collect_verdicts(v)
    elif isinstance(obj, list):
        for v in obj:
            out += collect_verdicts(v)
    return out


def exit_code_for(verdicts) -> int:
    return 2 if "Inconclusive" in verdicts else 0


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------

def _find_set(result: dict):
    keys = ((result["primary"],) if result.get("primary") in result else ()) + SET_KEYS
    for k in keys:
        v = result.get(k)
        if isinstance(v, dict) and "points" in v and "rays" in v:
            return k, v
    return None, None


def _set_rows(A: LimitSet):
    rows = [["point", -1] + list(p) for p in A.points]
    rows += [["ray", a] + list(r) for r, a in zip(A.rays, A.anchors)]
    return rows


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _trace_table(trace):
    rows = [t for t in trace if isinstance(t, dict)]
    keys = sorted({k for t in rows for k, v in t.items() if not isinstance(v, (dict, list))})
    return keys, [[t.get(k, "") for k in keys] for t in rows]


def _plot_set(A: LimitSet, png: Path, title: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    n = A.dim
    T = A.trunc_radius or DEFAULT_T
    fig = plt.figure(figsize=(4.5, 4.5))
    ax = fig.add_subplot(111, projection="3d" if n == 3 else None)
    P = A.points
    if n == 1:
        P = np.column_stack([P[:, 0], np.zeros(len(P))]) if len(P) else np.zeros((0, 2))
    if len(P):
        ax.scatter(*P.T, color="k", s=14, zorder=3)
    for r, a in zip(A.rays, A.anchors):
        base = np.zeros(n) if a < 0 else A.points[a]
        seg = np.vstack([base, base + T * r])
        if n == 1:
            seg = np.column_stack([seg[:, 0], np.zeros(2)])
        ax.plot(*seg.T, color="C0")
    lim = 1.1 * max(T, float(np.abs(A.points).max()) if len(A.points) else 0.0)
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    if n == 3:
        ax.set_zlim(-lim, lim)
    ax.set_title(title)
    fig.savefig(png, dpi=100)
    plt.close(fig)


def _plot_stability(rows, png: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    eps = [r["eps"] for r in rows]
    d = [r["max_distance"] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(eps, d, "o-")
    ax.set_xlabel("tilt radius")
    ax.set_ylabel("max distance to Sol(0)")
    ax.invert_xaxis()
    fig.tight_layout()
    fig.savefig(png, dpi=100)
    plt.close(fig)


def export_plot_data(result, path) -> dict:
    """Write plot data for a set, a stability scan or a CLI report.

    The main CSV holds points and rays (or the per-radius stability table);
    per-level traces go to <stem>_trace.csv and a figure to <stem>.png.
    Results above three dimensions get the trace table only and raise
    DimensionTooHigh afterwards.
    """
    path = Path(path)
    stem = path.with_suffix("")
    written = {}
    trace = []
    if isinstance(result, dict) and "schema" in result:
        title = result.get("command", "")
        result = result.get("result", {})
    else:
        title = ""
    if isinstance(result, dict) and "rows" in result:
        rows = result["rows"]
        _write_csv(path, ["eps", "max_distance", "checks_pass"],
                   [[r["eps"], r["max_distance"], r["checks_pass"]] for r in rows])
        written["csv"] = str(path)
        png = stem.with_suffix(".png")
        _plot_stability(rows, png)
        written["png"] = str(png)
        return written
    if isinstance(result, LimitSet):
        A = result
    else:
        key, d = _find_set(result)
        A = LimitSet.from_dict(d) if d is not None else None
        trace = result.get("trace", []) if isinstance(result.get("trace"), list) else []
        title = title or (key or "")
    if trace:
        keys, trows = _trace_table(trace)
        tpath = Path(f"{stem}_trace.csv")
        _write_csv(tpath, keys, trows)
        written["trace"] = str(tpath)
    if A is None:
        return written
    if A.dim > 3:
        raise DimensionTooHigh(f"plot data needs dimension <= 3, got {A.dim}")
    _write_csv(path, ["kind", "anchor"] + [f"x{i + 1}" for i in range(A.dim)], _set_rows(A))
    written["csv"] = str(path)
    png = stem.with_suffix(".png")
    _plot_set(A, png, title)
    written["png"] = str(png)
    return written
