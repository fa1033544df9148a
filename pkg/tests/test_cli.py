import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from l2game.cli import main

UNIT = {"version": 1, "blocks": [{"dim": 2, "rows": [[-1, 0], [0, -1]]}], "x0": [[1, 0]]}


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def scen(tmp_path):
    def make(name, **fields):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps({**UNIT, **fields}))
        return path
    return make


def test_optimal_time_prints_vartheta(scen):
    code, out, _ = run("optimal-time", scen("a", constraint={"theta": 1.0}))
    assert code == 0
    assert abs(float(out.splitlines()[0]) - 0.5 * math.log(3.0)) <= 1e-10


def test_json_report_fields(scen):
    code, out, _ = run("--json", "optimal-time", scen("a", constraint={"theta": 1.0}), "--tol", "1e-12")
    assert code == 0
    rep = json.loads(out)
    assert {"command", "tool_version", "parameters", "results", "wall_time", "quadrature", "backend"} <= set(rep)
    assert rep["parameters"]["tol"] == 1e-12
    assert rep["quadrature"] == {"panels_per_unit_time": 32, "nodes": 8}


def test_global_flags_after_subcommand(scen):
    code, out, _ = run("optimal-time", scen("a", constraint={"theta": 1.0}), "--quad-panels", "64",
                       "--quad-nodes", "6", "--json")
    assert json.loads(out)["quadrature"] == {"panels_per_unit_time": 64, "nodes": 6}


def test_reports_reproducible(scen):
    path = scen("g", constraint={"rho": 2.0, "sigma": 1.0})
    reps = [json.loads(run("--json", "pursuit", path, "--evader", "random", "--seed", "7")[1]) for _ in range(2)]
    assert reps[0]["results"] == reps[1]["results"]


def test_pursuit_zero_matches_null_control(scen, tmp_path):
    game = scen("g", constraint={"rho": 2.0, "sigma": 1.0})
    single = scen("a", constraint={"theta": 1.0})
    _, p, _ = run("--json", "pursuit", game, "--evader", "zero", "--out", tmp_path / "m.csv")
    _, n, _ = run("--json", "null-control", single, "--tau", "optimal", "--out", tmp_path / "n.csv")
    pr, nr = json.loads(p)["results"], json.loads(n)["results"]
    assert pr["capture_norm"] == nr["capture_norm"]
    assert pr["vartheta1"] == nr["tau"]


def test_null_control_ledger(scen, tmp_path):
    out_csv = tmp_path / "traj.csv"
    code, out, _ = run("--json", "null-control", scen("a", constraint={"theta": 1.0}), "--tau",
                       0.5 * math.log(3.0), "--out", out_csv, "--samples", 5)
    res = json.loads(out)["results"]
    assert code == 0
    assert res["energy"] == pytest.approx(1.0, rel=1e-12)
    assert res["gramian_cost"] == pytest.approx(1.0, rel=1e-12)
    assert res["capture_relative"] <= 1e-6
    assert res["admissible"] is True
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "t,total_norm"
    assert len(lines) == 6


def test_csv_seventeen_digits(scen, tmp_path):
    out_csv = tmp_path / "sim.csv"
    code, _, _ = run("simulate", scen("a", constraint={"theta": 1.0}), "--t-final", 1.0, "--samples", 3,
                     "--per-block", "--out", out_csv)
    assert code == 0
    rows = [r.split(",") for r in out_csv.read_text().splitlines()]
    assert rows[0] == ["t", "total_norm", "block_0"]
    assert float(rows[2][1]) == math.exp(-0.5)  # exp(-t) at t=0.5 survives the round trip
    assert rows[3][1] == format(math.exp(-1.0), ".17g")


def test_simulate_zero_state(scen, tmp_path):
    out_csv = tmp_path / "z.csv"
    run("simulate", scen("z", x0=[[0, 0]], constraint={"theta": 1.0}), "--t-final", 2, "--samples", 4,
        "--out", out_csv)
    rows = [r.split(",") for r in out_csv.read_text().splitlines()[1:]]
    assert [float(r[1]) for r in rows] == [0.0] * 4


def test_simulate_control_file(scen, tmp_path):
    ctrl = tmp_path / "c.json"
    ctrl.write_text(json.dumps({"kind": "closed_form", "expression": "exponential", "value": [-1, 0],
                                "horizon": 0.5 * math.log(3.0), "params": {"rate": 1.0}}))
    code, out, _ = run("--json", "simulate", scen("a", constraint={"theta": 1.0}), "--t-final",
                       0.5 * math.log(3.0), "--control", ctrl)
    res = json.loads(out)["results"]
    assert code == 0
    assert res["final_retained_norm"] <= 1e-13
    assert res["control_energy"] == pytest.approx(1.0, rel=1e-13)


def test_check_reports_diagnostics(scen):
    code, out, _ = run("--json", "check", scen("a", constraint={"theta": 1.0}, tail_bound=0.01))
    res = json.loads(out)["results"]
    assert code == 0
    assert res["abscissae"] == [-1.0] and res["stable"]
    assert res["tail_bound"] == 0.01
    assert res["inverse_bound_ok"]


def test_validation_exit_code(scen):
    code, _, err = run("check", scen("u", blocks=[{"dim": 2, "rows": [[0, 1], [-1, 0]]}],
                                     constraint={"theta": 1.0}))
    assert code == 2
    assert "block 0: spectral abscissa 0 >= 0" in err


def test_wrong_constraint_kind(scen):
    assert run("pursuit", scen("a", constraint={"theta": 1.0}))[0] == 2
    assert run("optimal-time", scen("g", constraint={"rho": 2.0, "sigma": 1.0}))[0] == 2


def test_numeric_failure_exit_code(scen):
    code, _, err = run("optimal-time", scen("a", constraint={"theta": 1e8}))
    assert code == 3
    assert "bracket" in err


def test_bad_arguments(scen):
    path = scen("a", constraint={"theta": 1.0})
    assert run("null-control", path, "--tau", "soon")[0] == 2
    assert run("null-control", path, "--tau", "-1")[0] == 2
    assert run("teleport", path)[0] == 2
    assert run("pursuit", path, "--evader", "teleport")[0] == 2


def test_allow_dim1(scen):
    path = scen("d1", blocks=[{"dim": 1, "rows": [[-1]]}], x0=[[1]], constraint={"theta": 1.0})
    assert run("optimal-time", path)[0] == 2
    code, out, _ = run("optimal-time", path, "--allow-dim1")
    assert code == 0 and abs(float(out.splitlines()[0]) - 0.5 * math.log(3.0)) <= 1e-10


def test_generate_then_run(tmp_path):
    path = tmp_path / "gen.json"
    assert run("generate", path, "--blocks", 12, "--seed", 2)[0] == 0
    first = path.read_bytes()
    run("generate", path, "--blocks", 12, "--seed", 2)
    assert path.read_bytes() == first
    code, out, _ = run("--json", "null-control", path, "--tau", "optimal")
    res = json.loads(out)["results"]
    assert code == 0 and res["capture_relative"] <= 1e-6 and res["admissible"]


def test_module_entry_point(scen):
    proc = subprocess.run([sys.executable, "-m", "l2game", "optimal-time", str(scen("a", constraint={"theta": 1.0}))],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert float(proc.stdout.splitlines()[0]) == pytest.approx(0.5 * math.log(3.0), abs=1e-10)
