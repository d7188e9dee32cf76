import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bessel_switch import cli


def run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_json(capsys):
    code, out, _ = run(["solve", "--n", "1", "--V", "2", "--no-timing"], capsys)
    rec = json.loads(out)
    assert code == 0 and rec["schema"] == cli.SCHEMA_VERSION
    assert rec["eta"] == pytest.approx(0.490854228997472828117, rel=1e-14)
    assert "wall_time" not in rec


def test_rates_from_r1_r2(capsys):
    _, a, _ = run(["solve", "--n", "1", "--r1", "2", "--r2", "8", "--no-timing"], capsys)
    _, b, _ = run(["solve", "--n", "1", "--V", "2", "--no-timing"], capsys)
    ra, rb = json.loads(a), json.loads(b)
    assert ra["eta"] == rb["eta"]
    assert ra["cutoff_c"] == pytest.approx(rb["cutoff_c"] * math.sqrt(2.0))


def test_timing_present_by_default(capsys):
    _, out, _ = run(["kappabar", "--n", "1"], capsys)
    assert json.loads(out)[0]["wall_time"] >= 0.0


@pytest.mark.parametrize("args", [
    ["solve", "--n", "2.5", "--V", "2"],
    ["solve", "--n", "1", "--V", "0.5"],
    ["solve", "--n", "1"],
    ["solve", "--n", "0.5,1", "--V", "2"],
    ["solve", "--n", "1", "--V", "2", "--T", "-1"],
    ["simulate", "--n", "1", "--V", "2", "--paths", "10"],
    ["simulate", "--n", "1", "--V", "2", "--strategy", "step"],
    ["frobnicate"],
    ["solve", "--n", "1", "--V", "2", "--bogus"],
])
def test_validation_exit_code(args, capsys):
    code, _, err = run(args, capsys)
    assert code == cli.EXIT_INVALID
    assert err


def test_verify_passes(capsys):
    code, out, _ = run(["verify", "--n", "1", "--V", "2", "--no-timing"], capsys)
    rows = json.loads(out)
    assert code == 0 and all(r["pass"] for r in rows)
    assert {r["method"] for r in rows} >= {"eigen_step", "rayleigh_eigen", "quadratic_form_check"}


def test_verify_failure_exit_code(capsys):
    # an absurd tolerance on the cross-checks cannot be met
    code, out, err = run(["verify", "--n", "1", "--V", "2", "--tol", "1e-15", "--grid", "200"], capsys)
    assert code == cli.EXIT_VERIFY
    assert "FAIL" in err and any(not r["pass"] for r in json.loads(out))


def test_solver_failure_exit_code(capsys, monkeypatch):
    def broken(params):
        raise RuntimeError("no convergence")

    monkeypatch.setattr(cli, "optimal_strategy", broken)
    code, _, err = run(["solve", "--n", "1", "--V", "2"], capsys)
    assert code == cli.EXIT_SOLVER and "solver failure" in err


def test_sweep_csv_and_rate_fit(capsys, tmp_path):
    out = tmp_path / "sweep.csv"
    code, _, _ = run(["sweep", "--n", "0.5", "--V", "1e2:1e3:4:log", "--rate-fit", "--format", "csv",
                      "--out", str(out), "--threads", "2"], capsys)
    assert code == 0
    recs = cli.parse_csv(out.read_text())
    points = [r for r in recs if r["command"] == "sweep"]
    fit = [r for r in recs if r["command"] == "sweep-rate-fit"]
    assert len(points) == 4 and all(r["status"] == "ok" for r in points)
    assert fit[0]["slope"] == pytest.approx(-1.5, abs=0.1)


def test_config_file_and_override(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nn = 1.5\nV: 3\nno-timing = true\n")
    _, a, _ = run(["solve", "--config", str(cfg)], capsys)
    _, b, _ = run(["solve", "--config", str(cfg), "--V", "2"], capsys)
    ra, rb = json.loads(a), json.loads(b)
    assert ra["n"] == 1.5 and ra["V"] == pytest.approx(3.0) and "wall_time" not in ra
    assert rb["V"] == pytest.approx(2.0)


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n = 1\ncolour = blue\n")
    code, _, err = run(["solve", "--config", str(cfg)], capsys)
    assert code == cli.EXIT_INVALID and "colour" in err


def test_float_lists():
    assert cli._floats("0.5,1,1.5") == [0.5, 1.0, 1.5]
    np.testing.assert_allclose(cli._floats("1:100:3:log"), [1.0, 10.0, 100.0])
    np.testing.assert_allclose(cli._floats("0:1:5"), [0.0, 0.25, 0.5, 0.75, 1.0])


@given(st.floats(allow_nan=False))
def test_format_float_round_trip(x):
    s = cli.format_float(x)
    y = float(s.replace("Infinity", "inf"))
    assert np.float64(y).tobytes() == np.float64(x).tobytes()


def test_json_nonfinite_and_nesting():
    obj = {"a": [1.0, float("nan"), float("-inf")], "b": {"c": np.float64(0.1), "d": np.int64(3)}, "e": True}
    back = json.loads(cli.to_json(obj, indent=2))
    assert math.isnan(back["a"][1]) and back["a"][2] == -math.inf
    assert back["b"] == {"c": 0.1, "d": 3} and back["e"] is True


def test_csv_quoting_and_lists():
    recs = [{"status": 'error: "x", y', "eps": [0.5, 0.25], "ok": True}]
    text = cli.to_csv(recs)
    assert text.endswith("\r\n")
    back = cli.parse_csv(text)[0]
    assert back["status"] == 'error: "x", y' and back["eps"] == "0.5;0.25" and back["ok"] == "true"


def test_simulate_record(capsys):
    code, out, _ = run(["simulate", "--n", "1", "--V", "2", "--paths", "20000", "--seed", "3",
                        "--strategy", "constant", "--eps-top", "0.3", "--no-timing"], capsys)
    rec = json.loads(out)
    assert code == 0 and rec["target"] == 1.0
    assert rec["ci_low"] < rec["slope"] < rec["ci_high"]
    assert len(rec["eps"]) == len(rec["counts"]) >= 4


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "bessel_switch", "kappabar", "--n", "0.5,1", "--no-timing",
                          "--format", "csv"], capture_output=True, text=True, check=True)
    recs = cli.parse_csv(res.stdout)
    assert [r["n"] for r in recs] == [0.5, 1.0]
    assert recs[1]["kappa_bar"] == pytest.approx(1.3069297277192810031, rel=1e-15)
