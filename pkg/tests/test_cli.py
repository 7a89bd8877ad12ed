import csv
import json

import pytest

from bmlab import cli
from bmlab.reports import CheckReport, report_from_json

DISC = {"family": {"kind": "profile", "dimension": 1, "t_range": [-1.0, 1.0],
                   "profile": {"type": "sqrt_quadratic", "c0": 1.0, "c1": 0.0, "c2": 1.0}},
        "phi": {"kind": "quadratic", "c": 2.0, "a": 1.0, "Q": [[1.0]]},
        "measure": {"family": "lebesgue", "dimension": 1}, "beta": 1.0}


def run(tmp_path, command, cfg, *extra):
    path = tmp_path / "cfg.json"
    path.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    out = tmp_path / "out"
    code = cli.main([command, *extra, "--config", str(path), "--out", str(out)])
    return code, out


def load(out):
    return report_from_json((out / "report.json").read_text())


def test_second_variation_on_the_disc(tmp_path):
    code, out = run(tmp_path, "second-variation", {**DISC, "t0": 0.0})
    rep = load(out)
    assert code == 0
    assert rep.details["rhs"] == pytest.approx(-1.8, abs=1e-10)
    assert rep.details["phi_dd"] == pytest.approx(-0.9 * (10 / 3) ** 0.5, abs=1e-9)
    assert rep.details["phi_dd_fd"] == pytest.approx(rep.details["phi_dd"], abs=1e-4)


def test_marginal_profile_writes_csv(tmp_path):
    code, out = run(tmp_path, "marginal-profile", {**DISC, "t_grid": [-0.9, 0.9, 7]})
    assert code == 0
    rows = list(csv.reader((out / "report.csv").open()))
    assert rows[0] == ["t", "value", "d2", "d2_half", "tolerance"]
    assert len(rows) == 8
    assert load(out).verdict == "concave"


def test_check_commands(tmp_path):
    code, out = run(tmp_path, "check", {"f": {"kind": "expression", "expr": "x", "dimension": 1}}, "brascamp_lieb")
    assert code == 0 and abs(load(out).margin) < 1e-10
    code, out = run(tmp_path, "check", {"check": "dim_bm", "K": {"kind": "box", "half_widths": [1.0]},
                                        "L": {"kind": "box", "half_widths": [2.0]}, "lam": 0.5,
                                        "measure": {"family": "gaussian", "dimension": 1}})
    assert code == 0
    rows = list(csv.reader((out / "report.csv").open()))
    assert rows[0] == ["name", "margin", "tolerance", "verdict"]
    assert float(rows[1][1]) == pytest.approx(0.029180723895581573, abs=1e-12)


def test_counterexample_is_not_a_theorem_violation(tmp_path):
    code, out = run(tmp_path, "check", {"M": 10.0}, "bbl_counterexample")
    rep = load(out)
    assert rep.margin < 0 and not rep.theorem
    assert code == 0


def test_b_profile_and_torsion(tmp_path):
    code, out = run(tmp_path, "b-profile", {"body": {"kind": "box", "half_widths": [1.0]},
                                            "measure": {"family": "gaussian", "dimension": 1},
                                            "t_grid": [-1, 1, 5]})
    assert code == 0 and load(out).verdict == "concave"
    code, out = run(tmp_path, "torsion", {"body": {"kind": "ball", "radius": 1.0, "dimension": 2},
                                          "measure": {"family": "lebesgue", "dimension": 2}})
    assert code == 0
    assert load(out).details["tau"] == pytest.approx(3.141592653589793 / 8, rel=1e-12)


def test_search_jobs_are_byte_identical(tmp_path):
    cfg = {"target": "b_local", "count": 6, "dimension": 2}
    outs = []
    for jobs in ("1", "3"):
        d = tmp_path / jobs
        d.mkdir()
        outs.append(run(d, "search", cfg, "--seed", "7", "--jobs", jobs)[1])
    a, b = outs
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()


@pytest.mark.parametrize("cfg", [
    '{"t0": 0.0,',
    {**DISC, "t0": 0.0, "extra": 1},
    {**DISC, "t0": 0.0, "beta": -1.0},
    {**DISC},
    {**DISC, "t0": 0.0, "quadrature": {"mode": "simpson"}},
])
def test_config_errors_exit_2(tmp_path, cfg, capsys):
    code, _ = run(tmp_path, "second-variation", cfg)
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_json_error_reports_position(tmp_path, capsys):
    run(tmp_path, "second-variation", '{\n  "t0": 0.0,\n}')
    assert "line 3" in capsys.readouterr().err


def test_unwritable_output_exits_2(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"f": {"kind": "expression", "expr": "x", "dimension": 1}}))
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["check", "brascamp_lieb", "--config", str(path), "--out", str(blocker / "sub")]) == 2


def test_theorem_violation_exits_1(tmp_path, monkeypatch):
    def fake(command, cfg, **kw):
        return CheckReport("dim_bm", -1.0, 1e-10, "violated", {}, True, {})
    monkeypatch.setattr(cli, "run_command", fake)
    code, _ = run(tmp_path, "check", {}, "dim_bm")
    assert code == 1
    monkeypatch.setattr(cli, "run_command",
                        lambda command, cfg, **kw: CheckReport("x", -1.0, 0.0, "violated", {}, False, {}))
    code, _ = run(tmp_path, "check", {}, "dim_bm")
    assert code == 0


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dimension": 1}))
    res = subprocess.run([sys.executable, "-m", "bmlab", "check", "b_local", "--config", str(path),
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "verdict=holds" in res.stdout
