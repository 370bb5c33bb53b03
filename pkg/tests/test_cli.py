import csv
import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from horizon import cli
from horizon.errors import DimensionTooHigh
from horizon.limitset import LimitSet
from horizon.report import export_plot_data

SCHEMA = json.loads((resources.files("horizon") / "schema" / "report.schema.json").read_text())

# one cheap invocation per subcommand
COMMANDS = {
    "subdiff-inf": ["--fn", "abs(x1)", "--dim", "1"],
    "singular-inf": ["--fn", "exp(x1)", "--dim", "1"],
    "normal-cone-inf": ["--set", "x2 <= 0", "--dim", "2", "--index-set", "1"],
    "lipschitz": ["--fn", "exp(x1)", "--dim", "1"],
    "clarke-inf": ["--fn", "abs(x1)", "--dim", "1"],
    "sum-rule": ["--fn", "abs(x1)", "--fn", "2*x1", "--dim", "1"],
    "max-rule": ["--fn", "x1", "--fn=-x1", "--dim", "1"],
    "min-rule": ["--fn", "x1", "--fn", "2*x1", "--dim", "1"],
    "chain-rule": ["--fn", "x1", "--inner", "2*x1+1", "--dim", "1"],
    "partial-check": ["--fn", "x1+x2^2", "--dim", "2", "--ybar", "0"],
    "constraint-cone": ["--g", "x1", "--dim", "2"],
    "optimality": ["--fn", "exp(x1)+x2^2", "--dim", "2"],
    "coercivity": ["--fn", "x1^2+x2^2", "--dim", "2", "--plan.levels", "4"],
    "stability": ["--fn", "x1^2+x2^2", "--dim", "2", "--plan.levels", "4", "--eps", "0.5,0.25"],
    "verify-fixtures": ["--only", "abs_subdiff"],
}


def run(capsys, argv):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("cmd", sorted(COMMANDS))
def test_every_command_validates_against_the_schema(capsys, cmd):
    code, out, _ = run(capsys, [cmd] + COMMANDS[cmd])
    report = json.loads(out)
    jsonschema.validate(report, SCHEMA)
    assert report["schema"] == "horizon/1" and report["command"] == cmd
    assert code in (0, 2)


@pytest.mark.parametrize("cmd", ["subdiff-inf", "normal-cone-inf", "sum-rule"])
def test_reports_are_byte_identical(capsys, cmd):
    argv = [cmd] + COMMANDS[cmd] + ["--seed", "3"]
    assert run(capsys, argv)[1] == run(capsys, argv)[1]


def test_error_reports_validate(capsys):
    code, out, _ = run(capsys, ["coercivity", "--fn", "exp(x1)+x2^2", "--dim", "2"])
    report = json.loads(out)
    jsonschema.validate(report, SCHEMA)
    assert code == 1 and report["error"]["type"] == "ConditionNotRefuted"


def test_resolved_verdicts_exit_zero(capsys):
    code, out, _ = run(capsys, ["lipschitz", "--fn", "exp(x1)", "--dim", "1"])
    assert code == 0 and json.loads(out)["result"]["certificate"]["verdict"] == "Fails"


def test_inconclusive_exits_two(capsys):
    code, out, _ = run(capsys, ["partial-check", "--fn", "x1*x2^2", "--dim", "2", "--ybar", "1"])
    assert code == 2 and "Inconclusive" in json.loads(out)["verdicts"]


@pytest.mark.parametrize("argv", [
    [],
    ["no-such-command"],
    ["subdiff-inf", "--fn", "abs(x1"],
    ["subdiff-inf", "--fn", "abs(x1)", "--dim", "1", "--plan.levels", "1"],
    ["sum-rule", "--fn", "x1", "--dim", "1"],
    ["verify-fixtures", "--only", "nope"],
])
def test_usage_errors_exit_64(capsys, argv):
    code, _, err = run(capsys, argv)
    assert code == 64 and "usage error" in err


def test_file_errors_exit_74(capsys, tmp_path):
    code, _, _ = run(capsys, ["subdiff-inf", "--fn", "x1", "--dim", "1", "--out", str(tmp_path / "no" / "r.json")])
    assert code == 74
    code, _, _ = run(capsys, ["optimality", "--problem", str(tmp_path / "missing.json")])
    assert code == 74


def test_plan_file_from_environment(capsys, tmp_path, monkeypatch):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"levels": 5, "dirs_per_level": 16}))
    monkeypatch.setenv("HORIZON_PLAN", str(plan))
    code, out, _ = run(capsys, ["subdiff-inf", "--fn", "abs(x1)", "--dim", "1", "--plan.dirs", "32"])
    p = json.loads(out)["plan"]
    assert code == 0 and p["levels"] == 5 and p["dirs_per_level"] == 32


def test_other_formats(capsys):
    code, out, _ = run(capsys, ["clarke-inf", "--fn", "abs(x1)", "--dim", "1", "--format", "csv"])
    assert code == 0 and out.splitlines()[0] == "key,kind,values"
    assert "hull,point,-1.0" in out
    code, out, _ = run(capsys, ["clarke-inf", "--fn", "abs(x1)", "--dim", "1", "--format", "pretty"])
    assert out.startswith("clarke-inf") and "verdicts: Holds" in out


def test_verify_fixture_subset(capsys):
    code, out, _ = run(capsys, ["verify-fixtures", "--only", "sum_abs_linear", "--only", "exp_not_lipschitz"])
    res = json.loads(out)["result"]["fixtures"]
    assert code == 0 and [r["name"] for r in res] == ["exp_not_lipschitz", "sum_abs_linear"]
    assert all(r["ok"] for r in res)


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------

def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_plot_export_of_a_two_sided_cone(capsys, tmp_path):
    target = tmp_path / "cone.csv"
    code, _, _ = run(capsys, ["normal-cone-inf", "--set", "set { h: x1*x2 = 1; }", "--dim", "2",
                              "--index-set", "1", "--plot", str(target)])
    rows = _rows(target)
    assert code == 0 and rows[0] == ["kind", "anchor", "x1", "x2"]
    rays = sorted(tuple(float(v) for v in r[2:]) for r in rows[1:] if r[0] == "ray")
    assert np.allclose(rays, [(0.0, -1.0), (0.0, 1.0)], atol=0.02)
    assert (tmp_path / "cone.png").stat().st_size > 0
    assert (tmp_path / "cone_trace.csv").exists()


def test_plot_export_of_an_empty_set(tmp_path):
    export_plot_data(LimitSet.empty(2), tmp_path / "e.csv")
    assert _rows(tmp_path / "e.csv") == [["kind", "anchor", "x1", "x2"]]


def test_plot_export_of_a_stability_table(capsys, tmp_path):
    target = tmp_path / "st.csv"
    run(capsys, ["stability"] + COMMANDS["stability"] + ["--plot", str(target)])
    rows = _rows(target)
    assert rows[0] == ["eps", "max_distance", "checks_pass"] and len(rows) == 3
    assert float(rows[1][1]) == pytest.approx(0.25, abs=0.05)


def test_plot_export_rejects_high_dimension(tmp_path):
    with pytest.raises(DimensionTooHigh):
        export_plot_data(LimitSet.zero_cone(4), tmp_path / "h.csv")
