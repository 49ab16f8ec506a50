"""End-to-end runs of the svyboot console script."""

import csv
import json
import re
import subprocess

import numpy as np
import pytest


def run_cli(*argv, cwd=None):
    return subprocess.run(["svyboot", *argv], capture_output=True,
                          text=True, cwd=cwd, timeout=300)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


@pytest.fixture()
def gof_csv(tmp_path):
    path = tmp_path / "cats.csv"
    rows = [["a", 1.0] for _ in range(60)] + [["b", 1.0] for _ in range(40)]
    write_rows(path, ["y", "w"], rows)
    return str(path)


@pytest.fixture()
def reg_csv(tmp_path):
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 4, 40)
    y = 1.0 + 0.8 * x + rng.standard_normal(40)
    path = tmp_path / "reg.csv"
    write_rows(path, ["y", "x1", "w"],
               [[repr(float(a)), repr(float(b)), "5.0"] for a, b in zip(y, x)])
    return str(path)


def test_version_flag():
    proc = run_cli("--version")
    assert proc.returncode == 0
    assert proc.stdout.startswith("svyboot ")


def test_simulate_twice_is_byte_identical():
    argv = ("simulate", "--scenario", "table1", "--mc", "10",
            "--reps", "50", "--seed", "7")
    one = run_cli(*argv)
    two = run_cli(*argv)
    assert one.returncode == 0
    assert one.stdout == two.stdout
    assert "[svyboot] seed: 7" in one.stderr
    assert "wall time" in one.stderr
    doc = json.loads(one.stdout)
    assert doc["scenario"] == "table1"
    assert doc["master_seed"] == 7
    assert len(doc["rows"]) == 5 * 3


def test_simulate_writes_out_file(tmp_path):
    out = tmp_path / "report.json"
    proc = run_cli("simulate", "--scenario", "table1", "--mc", "2",
                   "--reps", "30", "--seed", "11", "--population", "100",
                   "--sample-size", "12", "--null-values", "1.0",
                   "--out", str(out))
    assert proc.returncode == 0
    assert proc.stdout == ""
    doc = json.loads(out.read_text())
    assert doc["config"]["mc_reps"] == 2


def test_gof_hand_value(gof_csv):
    proc = run_cli("gof", gof_csv, "--expected", "0.5,0.5",
                   "--method", "np,nlr", "--seed", "1")
    assert proc.returncode == 0
    doc = json.loads(proc.stdout)
    by_method = {r["method"]: r for r in doc["results"]}
    assert abs(by_method["gof-naive-pearson"]["statistic"] - 4.000) < 1e-12
    assert abs(by_method["gof-naive-lrt"]["statistic"]
               - 200.0 * (0.6 * np.log(1.2) + 0.4 * np.log(0.8))) < 1e-12


def test_missing_input_file_is_a_data_error(tmp_path):
    proc = run_cli("gof", str(tmp_path / "nope.csv"),
                   "--expected", "0.5,0.5", "--seed", "1")
    assert proc.returncode == 3
    assert "nope.csv" in proc.stderr


def test_usage_errors_exit_2():
    assert run_cli("simulate", "--scenario", "table1", "--bogus").returncode == 2
    assert run_cli().returncode == 2
    assert run_cli("frobnicate").returncode == 2


def test_singular_fit_exits_4(tmp_path):
    path = tmp_path / "collinear.csv"
    rows = [[1.0 + i, float(i), float(i), 2.0] for i in range(12)]
    write_rows(path, ["y", "x1", "x2", "w"], rows)
    proc = run_cli("fit", str(path), "--model", "gaussian", "--seed", "1")
    assert proc.returncode == 4
    assert "estimation failed" in proc.stderr


def test_seed_is_always_reported(gof_csv):
    fixed = run_cli("gof", gof_csv, "--expected", "0.5,0.5",
                    "--method", "np", "--seed", "42")
    assert "[svyboot] seed: 42" in fixed.stderr
    fresh = run_cli("gof", gof_csv, "--expected", "0.5,0.5", "--method", "np")
    assert re.search(r"\[svyboot\] seed: \d+", fresh.stderr)


def test_fit_report(reg_csv):
    proc = run_cli("fit", reg_csv, "--model", "gaussian", "--seed", "2")
    assert proc.returncode == 0
    doc = json.loads(proc.stdout)
    assert doc["coefficients"] == ["intercept", "x1"]
    assert doc["converged"] is True
    assert len(doc["theta"]) == len(doc["standard_errors"]) == 2
    assert abs(doc["theta"][1] - 0.8) < 0.5
    text = run_cli("fit", reg_csv, "--model", "gaussian", "--seed", "2",
                   "--format", "text")
    assert repr(doc["theta"][0]) in text.stdout


def test_formats_agree_to_full_precision(reg_csv):
    argv = ("test", reg_csv, "--model", "gaussian", "--null", "x1=0.8",
            "--method", "nlr,nqs,wald", "--seed", "5")
    doc = json.loads(run_cli(*argv).stdout)
    csv_out = run_cli(*argv, "--format", "csv").stdout
    text_out = run_cli(*argv, "--format", "text").stdout
    lines = csv_out.strip().splitlines()
    assert lines[0].startswith("method,statistic,p_value")
    for line, res in zip(lines[1:], doc["results"]):
        parts = line.split(",")
        assert parts[0] == res["method"]
        assert float(parts[1]) == res["statistic"]
        assert float(parts[2]) == res["p_value"]
    for res in doc["results"]:
        assert repr(res["statistic"]) in text_out
        assert repr(res["p_value"]) in text_out


def test_weights_round_trip_feeds_test_command(reg_csv, tmp_path):
    out = tmp_path / "with_weights.csv"
    proc = run_cli("weights", reg_csv, "--design", "poisson",
                   "--reps", "40", "--seed", "3", "--out", str(out))
    assert proc.returncode == 0
    assert "wrote 40 replicate weight columns" in proc.stderr
    with open(out) as fh:
        header = fh.readline().strip().split(",")
    assert [c for c in header if c.startswith("bw_")] == \
        [f"bw_{j}" for j in range(1, 41)]
    proc = run_cli("test", str(out), "--model", "gaussian",
                   "--null", "x1=0.8", "--method", "blr", "--seed", "9")
    assert proc.returncode == 0
    doc = json.loads(proc.stdout)
    res = doc["results"][0]
    assert res["method"] == "blr"
    assert res["replicates_used"] + res["replicates_dropped"] == 40
    assert res["reference"]["kind"] == "bootstrap"


def test_weights_requires_out(reg_csv):
    proc = run_cli("weights", reg_csv, "--reps", "5", "--seed", "3")
    assert proc.returncode == 3


def test_independence_hand_value(tmp_path):
    path = tmp_path / "table.csv"
    rows = []
    for (r, c), count in ((("r1", "c1"), 40), (("r1", "c2"), 10),
                          (("r2", "c1"), 10), (("r2", "c2"), 40)):
        rows.extend([[0.0, r, c, 1.0]] * count)
    write_rows(path, ["y", "r", "c", "w"], rows)
    proc = run_cli("independence", str(path), "--row", "r", "--col", "c",
                   "--method", "np", "--seed", "1")
    assert proc.returncode == 0
    doc = json.loads(proc.stdout)
    assert abs(doc["results"][0]["statistic"] - 36.0) < 1e-12
    assert doc["config"]["table_shape"] == [2, 2]


def test_unknown_method_is_a_data_error(gof_csv):
    proc = run_cli("gof", gof_csv, "--expected", "0.5,0.5",
                   "--method", "banana", "--seed", "1")
    assert proc.returncode == 3
    assert "banana" in proc.stderr
