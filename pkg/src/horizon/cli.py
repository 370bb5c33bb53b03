"""Command-line front end: `horizon <command> [flags]`.

Exit codes: 0 when every certificate in the report is resolved (Holds or Fails),
2 when any is Inconclusive, 1 on library errors, 64 on usage errors and 74 on
file errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import expr as E
from . import sets as S_
from .calculus import (chain_rule_at_infinity, constraint_cone_bound, max_rule_at_infinity,
                       min_rule_at_infinity, partial_subdiff_check, sum_rule_at_infinity)
from .certificate import _plain
from .cones import estimate_normal_cone, index_set
from .errors import (AssumptionViolated, CoercivityFailed, DimensionTooHigh, DSLSyntaxError, HorizonError,
                     QualificationFailed, SemanticError)
from .infinity import estimate_at_infinity, subdiff_at_infinity_via_epigraph
from .limitset import LimitSet, SamplingPlan, truncated_hausdorff
from .lipschitz import lipschitz_at_infinity, piecewise_linear_exact
from .optimality import (DEFAULT_M, DEFAULT_STEP, ProblemSpec, brute_force_minimize,
                         certify_coercivity, check_condition_at_infinity, diagnose_attainment,
                         stability_scan)
from .report import SCHEMA, collect_verdicts, exit_code_for, export_plot_data, to_json

EXIT_OK, EXIT_INCONCLUSIVE, EXIT_ERROR, EXIT_USAGE, EXIT_IO = 0, 2, 1, 64, 74

COMMANDS = ("subdiff-inf", "singular-inf", "normal-cone-inf", "lipschitz", "clarke-inf", "sum-rule",
            "max-rule", "min-rule", "chain-rule", "partial-check", "constraint-cone", "optimality",
            "coercivity", "stability", "verify-fixtures")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--fn", action="append", default=[], help="function in the expression DSL (repeatable)")
    p.add_argument("--set", help="set description")
    p.add_argument("--dim", type=int, help="ambient dimension")
    p.add_argument("--index-set", help="1-based escaping coordinates, e.g. 1,2 (default: all)")
    p.add_argument("--plan.r0", dest="plan_r0", type=float)
    p.add_argument("--plan.levels", dest="plan_levels", type=int)
    p.add_argument("--plan.dirs", dest="plan_dirs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv", "pretty"), default="json")
    p.add_argument("--plot", help="write plot data: CSV at this path plus a PNG beside it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="horizon", description="Subdifferentials, normal cones and optimality at infinity.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _common(p)
        if name in ("subdiff-inf", "singular-inf"):
            p.add_argument("--route", choices=("direct", "epigraph", "exact"), default="direct")
        if name == "normal-cone-inf":
            p.add_argument("--route", choices=("projection", "pointwise"), default="projection")
        if name == "chain-rule":
            p.add_argument("--inner", action="append", default=[], help="inner map g_i (repeatable)")
            p.add_argument("--inner-dim", type=int, help="dimension of the inner maps' domain")
        if name == "partial-check":
            p.add_argument("--ybar", required=True, help="comma-separated values of the fixed block")
        if name == "constraint-cone":
            p.add_argument("--g", action="append", default=[], help="inequality g(x) <= 0 (repeatable)")
            p.add_argument("--h", action="append", default=[], help="equality h(x) = 0 (repeatable)")
        if name in ("optimality", "coercivity", "stability"):
            p.add_argument("--problem", help="problem file (JSON: fn, dim, set, plan, M, grid_step)")
            p.add_argument("--M", type=float)
            p.add_argument("--grid-step", type=float)
        if name == "stability":
            p.add_argument("--eps", default="0.5,0.25,0.125")
            p.add_argument("--u-samples", type=int, default=8)
        if name == "verify-fixtures":
            p.add_argument("--fixtures", help="fixture directory (default: bundled corpus)")
            p.add_argument("--only", action="append", default=[], help="run only these fixture names")
    return parser


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def load_plan(args) -> SamplingPlan:
    base = {}
    env = os.environ.get("HORIZON_PLAN")
    if env:
        with open(env) as fh:
            base = json.load(fh)
    over = {"r0": args.plan_r0, "levels": args.plan_levels, "dirs_per_level": args.plan_dirs, "seed": args.seed}
    base.update({k: v for k, v in over.items() if v is not None})
    try:
        return SamplingPlan.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid sampling plan: {exc}") from exc


def _need(args, *names):
    for n in names:
        v = getattr(args, n)
        if v is None or v == []:
            raise UsageError(f"--{n.replace('_', '-')} is required for {args.command}")


def _fns(args, k=None):
    _need(args, "fn", "dim")
    if k is not None and len(args.fn) != k:
        raise UsageError(f"{args.command} needs exactly {k} --fn")
    return [E.parse_function(t, args.dim) for t in args.fn]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_subdiff(args, plan, singular=False):
    (f,) = _fns(args, 1)
    if args.route == "epigraph":
        lim, sing = subdiff_at_infinity_via_epigraph(f, plan)
        return {"limiting": lim, "singular": sing, "route": "epigraph"}
    if args.route == "exact":
        bound, rep = piecewise_linear_exact(f, plan)
        return {"limiting": bound, "certificate": rep.verdict, "route": "exact", "L": rep.L_estimate}
    est = estimate_at_infinity(f, plan)
    out = {"limiting": est.limiting, "singular": est.singular, "trace": est.trace, "route": "direct",
           "primary": "singular" if singular else "limiting"}
    if est.inconclusive:
        out["sampling"] = {"verdict": "Inconclusive", "note": "no samples in dom f at the last levels"}
    return out


def _cmd_normal_cone(args, plan):
    _need(args, "set", "dim")
    S = S_.parse_set(args.set, args.dim)
    I = tuple(int(v) for v in _floats(args.index_set)) if args.index_set else tuple(range(1, args.dim + 1))
    est = estimate_normal_cone(S, index_set(I, args.dim), plan, route=args.route)
    return {"cone": est.cone, "index_set": list(I), "trace": est.trace, "route": args.route}


def _cmd_lipschitz(args, plan):
    (f,) = _fns(args, 1)
    rep = lipschitz_at_infinity(f, plan)
    return {"certificate": rep.verdict, "L": rep.L_estimate, "R": rep.R_estimate,
            "hull": rep.clarke_hull, "quotients": rep.quotients}


def _cmd_clarke(args, plan):
    (f,) = _fns(args, 1)
    rep = lipschitz_at_infinity(f, plan)
    out = {"certificate": rep.verdict, "L": rep.L_estimate}
    if rep.verdict.holds:
        out["hull"] = rep.clarke_hull
    return out


def _cmd_rule(args, plan, rule):
    f1, f2 = _fns(args, 2)
    try:
        bound, cert = rule(f1, f2, plan)
    except QualificationFailed as exc:
        return {"qualification": exc.report.to_dict(), "error": str(exc)}
    return {"bound": bound, "certificate": cert}


def _cmd_chain(args, plan):
    (f,) = _fns(args, 1)
    if not args.inner:
        raise UsageError("chain-rule needs --inner for each argument of f")
    gdim = _inner_dim(args)
    gs = [E.parse_function(t, gdim) for t in args.inner]
    if len(gs) != f.dim:
        raise UsageError(f"f takes {f.dim} arguments, got {len(gs)} --inner")
    try:
        bound, cert = chain_rule_at_infinity(f, gs, plan)
    except CoercivityFailed as exc:
        return {"coercivity": {"verdict": "Fails", "note": str(exc), "witness": exc.witness},
                "direct": exc.direct}
    except QualificationFailed as exc:
        return {"qualification": exc.report.to_dict(), "error": str(exc)}
    return {"bound": bound, "certificate": cert}


def _inner_dim(args) -> int:
    """Inner maps live in R^m; m defaults to the largest variable index they use."""
    import re
    if args.inner_dim:
        return args.inner_dim
    idx = [int(k) for t in args.inner for k in re.findall(r"x(\d+)", t)]
    return max(idx + [1])


def _cmd_partial(args, plan):
    (phi,) = _fns(args, 1)
    cert = partial_subdiff_check(phi, _floats(args.ybar), plan)
    return {"certificate": cert}


def _cmd_constraint(args, plan):
    _need(args, "dim")
    if not args.g and not args.h:
        raise UsageError("constraint-cone needs at least one --g or --h")
    gs = [E.parse_function(t, args.dim) for t in args.g]
    hs = [E.parse_function(t, args.dim) for t in args.h]
    bound, rep = constraint_cone_bound(gs, hs, plan)
    out = {"qualification": rep.to_dict()}
    if bound is not None:
        out["bound"] = bound
    return out


def _problem(args, plan) -> ProblemSpec:
    spec = {}
    if args.problem:
        with open(args.problem) as fh:
            spec = json.load(fh)
    fn = args.fn[0] if args.fn else spec.get("fn")
    dim = args.dim or spec.get("dim")
    if fn is None or dim is None:
        raise UsageError("a problem needs --fn and --dim (or a --problem file)")
    st = args.set or spec.get("set") or "whole"
    if "plan" in spec:
        merged = plan.to_dict()
        merged.update(spec["plan"])
        over = {"r0": args.plan_r0, "levels": args.plan_levels, "dirs_per_level": args.plan_dirs,
                "seed": args.seed}
        merged.update({k: v for k, v in over.items() if v is not None})
        plan = SamplingPlan.from_dict(merged)
    M = args.M or spec.get("M", DEFAULT_M)
    step = args.grid_step or spec.get("grid_step", DEFAULT_STEP)
    return ProblemSpec(E.parse_function(fn, dim), S_.parse_set(st, dim), plan, M, step)


def _cmd_optimality(args, plan):
    P = _problem(args, plan)
    try:
        diag = diagnose_attainment(P)
    except AssumptionViolated as exc:
        return {"assumption": {"verdict": "Fails", "name": exc.assumption, "note": str(exc),
                               "witness": exc.witness}, "problem": P.to_dict()}
    return {"diagnosis": diag["status"], "unattained": diag["unattained"], "oracle": diag["oracle"],
            "condition": diag["condition"], "problem": P.to_dict()}


def _cmd_coercivity(args, plan):
    P = _problem(args, plan)
    cert, sol, ws = certify_coercivity(P)
    return {"certificate": cert, "solution": sol.to_dict(),
            "weak_sharp": None if ws is None else {"c": ws[0], "R": ws[1]}, "problem": P.to_dict()}


def _cmd_stability(args, plan):
    P = _problem(args, plan)
    rep = stability_scan(P, _floats(args.eps), args.u_samples)
    return {"rows": rep["rows"], "monotone": rep["monotone"], "largest_passing_eps": rep["largest_passing_eps"],
            "certificate": rep["certificate"], "sol0": rep["sol0"], "problem": P.to_dict()}


HANDLERS = {
    "subdiff-inf": _cmd_subdiff,
    "singular-inf": lambda a, p: _cmd_subdiff(a, p, singular=True),
    "normal-cone-inf": _cmd_normal_cone,
    "lipschitz": _cmd_lipschitz,
    "clarke-inf": _cmd_clarke,
    "sum-rule": lambda a, p: _cmd_rule(a, p, sum_rule_at_infinity),
    "max-rule": lambda a, p: _cmd_rule(a, p, max_rule_at_infinity),
    "min-rule": lambda a, p: _cmd_rule(a, p, min_rule_at_infinity),
    "chain-rule": _cmd_chain,
    "partial-check": _cmd_partial,
    "constraint-cone": _cmd_constraint,
    "optimality": _cmd_optimality,
    "coercivity": _cmd_coercivity,
    "stability": _cmd_stability,
}


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------

def fixture_dir() -> Path:
    return Path(str(resources.files("horizon") / "fixtures"))


def load_fixtures(directory=None) -> list:
    d = Path(directory) if directory else fixture_dir()
    out = []
    for p in sorted(d.glob("*.json")):
        with open(p) as fh:
            fx = json.load(fh)
        fx.setdefault("name", p.stem)
        out.append(fx)
    return out


def fixture_argv(fx: dict) -> list:
    argv = [fx["command"]]
    for k, v in fx.get("args", {}).items():
        flag = "--" + k
        for item in (v if isinstance(v, list) else [v]):
            argv.append(f"{flag}={item}")
    return argv


def _lookup(obj, path: str):
    for part in path.split("."):
        if isinstance(obj, list):
            obj = obj[int(part)]
        else:
            obj = obj[part]
    return obj


def check_expectation(report: dict, chk: dict):
    """(ok, detail) for one expectation against a report."""
    try:
        got = _lookup(report, chk["path"])
    except (KeyError, IndexError, TypeError):
        return False, f"missing {chk['path']}"
    if "equals" in chk:
        return got == chk["equals"], f"{chk['path']} = {got!r}"
    if "set" in chk:
        A = LimitSet.from_dict(got)
        B = LimitSet.from_dict(chk["set"], dim=A.dim)
        d = truncated_hausdorff(A, B)
        return d <= chk.get("tol", 0.05), f"{chk['path']} distance {d:.4g}"
    if "approx" in chk:
        tol = chk.get("abs", 0.0) + chk.get("rel", 0.0) * abs(chk["approx"])
        return abs(float(got) - chk["approx"]) <= tol, f"{chk['path']} = {got!r}"
    if "at_most" in chk:
        return float(got) <= chk["at_most"], f"{chk['path']} = {got!r}"
    return False, f"unknown expectation {chk}"


def run_fixture(fx: dict) -> dict:
    argv = fixture_argv(fx)
    args = build_parser().parse_args(argv)
    report, code = execute(args)
    results = [dict(zip(("ok", "detail"), check_expectation(report, c))) for c in fx.get("expect", [])]
    ok = all(r["ok"] for r in results) and code in fx.get("exit_codes", [EXIT_OK, EXIT_INCONCLUSIVE])
    return {"name": fx["name"], "ok": bool(ok), "exit_code": code, "checks": results,
            "verdict": "Holds" if ok else "Fails"}


def _cmd_verify(args, plan):
    fixtures = load_fixtures(args.fixtures)
    if args.only:
        fixtures = [fx for fx in fixtures if fx["name"] in args.only]
        if not fixtures:
            raise UsageError(f"no fixture named {args.only}")
    return {"fixtures": [run_fixture(fx) for fx in fixtures]}


HANDLERS["verify-fixtures"] = _cmd_verify


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def execute(args):
    """(report, exit code) for parsed arguments; library errors become error reports."""
    plan = load_plan(args)
    report = {"schema": SCHEMA, "command": args.command, "plan": plan.to_dict()}
    try:
        result = HANDLERS[args.command](args, plan)
    except (DSLSyntaxError, SemanticError) as exc:
        raise UsageError(str(exc)) from exc
    except HorizonError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        report["verdicts"] = []
        return _plain(report), EXIT_ERROR
    report["result"] = _plain(result)
    verdicts = collect_verdicts(report["result"])
    report["verdicts"] = verdicts
    code = exit_code_for(verdicts)
    if args.command == "verify-fixtures" and any(not r["ok"] for r in report["result"]["fixtures"]):
        code = EXIT_ERROR
    return report, code


def _pretty(report: dict) -> str:
    lines = [f"{report['command']}  (schema {report['schema']})"]
    if "error" in report:
        lines.append(f"error: {report['error']['type']}: {report['error']['message']}")
        return "\n".join(lines) + "\n"
    for k, v in sorted(report.get("result", {}).items()):
        if k == "trace":
            continue
        if isinstance(v, dict) and "points" in v and "rays" in v:
            lines.append(f"{k}: points={v['points']} rays={v['rays']}")
        elif isinstance(v, dict) and "verdict" in v:
            lines.append(f"{k}: {v['verdict']} (margin {v.get('margin')})")
        elif isinstance(v, list) and k == "fixtures":
            lines += [f"  {'PASS' if r['ok'] else 'FAIL'}  {r['name']}" for r in v]
        elif not isinstance(v, (dict, list)):
            lines.append(f"{k}: {v}")
    lines.append(f"verdicts: {', '.join(report.get('verdicts', [])) or 'none'}")
    return "\n".join(lines) + "\n"


def _csv_text(report: dict) -> str:
    import csv
    import io
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "kind", "values"])
    for k, v in sorted(report.get("result", {}).items()):
        if isinstance(v, dict) and "points" in v and "rays" in v:
            for p in v["points"]:
                w.writerow([k, "point", " ".join(repr(float(x)) for x in p)])
            for r in v["rays"]:
                w.writerow([k, "ray", " ".join(repr(float(x)) for x in r)])
        elif isinstance(v, dict) and "verdict" in v:
            w.writerow([k, "verdict", v["verdict"]])
    return buf.getvalue()


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required")
        report, code = execute(args)
    except UsageError as exc:
        print(f"horizon: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"horizon: {exc}", file=sys.stderr)
        return EXIT_IO
    text = {"json": to_json, "pretty": _pretty, "csv": _csv_text}[args.format](report)
    try:
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        if args.plot and "result" in report:
            try:
                export_plot_data(report, args.plot)
            except DimensionTooHigh as exc:
                print(f"horizon: {exc}; trace tables only", file=sys.stderr)
    except OSError as exc:
        print(f"horizon: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
