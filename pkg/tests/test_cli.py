import json
import subprocess
import sys

import numpy as np
import pytest

from panelpost.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from panelpost.panel_core import PanelDataset, write_panel_csv
from panelpost.simulation import SimulationConfig, generate_dgp

from conftest import random_panel


@pytest.fixture(scope="module")
def panel_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "panel.csv"
    write_panel_csv(generate_dgp(SimulationConfig(true_model=1, N=10, seed=0), 0).data, path)
    return path


def test_fit_post_reports_k_plus_t_coefficients(panel_csv, tmp_path, capsys):
    assert len(panel_csv.read_text().splitlines()) == 451
    out = tmp_path / "fit"
    assert main(["fit", str(panel_csv), "--out-dir", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert [c["name"] for c in report["coefficients"]] == ["beta_1"] + [f"lambda_{t}" for t in range(1, 6)]
    assert len((out / "report.csv").read_text().splitlines()) == 7
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "fit" and len(manifest["input_sha256"]) == 64
    assert "beta_1" in capsys.readouterr().out


def test_manifest_reproduces_fit(panel_csv, tmp_path):
    first = tmp_path / "a"
    assert main(["fit", str(panel_csv), "--estimator", "post", "--nodewise-targets", "x", "--seed", "3",
                 "--out-dir", str(first)]) == EXIT_OK
    argv = json.loads((first / "manifest.json").read_text())["argv"]
    second = tmp_path / "b"
    argv[argv.index("--out-dir") + 1] = str(second)
    assert main(argv) == EXIT_OK
    assert (first / "report.json").read_bytes() == (second / "report.json").read_bytes()


@pytest.mark.parametrize("est", ["ols", "fe1", "fe2", "fe3"])
def test_fit_baselines(panel_csv, tmp_path, est):
    assert main(["fit", str(panel_csv), "--estimator", est, "--out-dir", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    c = report["coefficients"][0]
    assert c["ci"][0] < c["estimate"] < c["ci"][1]


def test_duplicate_row_is_data_error(panel_csv, tmp_path, capsys):
    lines = panel_csv.read_text().splitlines()
    bad = tmp_path / "dup.csv"
    bad.write_text("\n".join(lines + [lines[5]]) + "\n")
    assert main(["fit", str(bad)]) == EXIT_DATA
    assert "duplicate" in capsys.readouterr().err


def test_missing_file_is_data_error(tmp_path):
    assert main(["fit", str(tmp_path / "nope.csv")]) == EXIT_DATA


def test_fe3_collinear_is_numerical_error(tmp_path, capsys):
    data = random_panel(N=3, M=3, T=2, seed=4)
    x = np.broadcast_to(np.arange(6.0).reshape(3, 1, 2, 1), data.x.shape).copy()
    path = tmp_path / "col.csv"
    write_panel_csv(PanelDataset(data.y, x), path)
    assert main(["fit", str(path), "--estimator", "fe3"]) == EXIT_NUMERIC
    assert "not identified" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["simulate", "--model", "1", "--n", "5", "--reps", "0", "--seed", "1"],
                                  ["simulate", "--model", "4", "--n", "5", "--reps", "1", "--seed", "1"],
                                  ["simulate", "--model", "1", "--n", "5", "--reps", "1"],
                                  ["fit"], [], ["bogus"]])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_simulate_single_rep_zero_sd(tmp_path, capsys):
    assert main(["simulate", "--model", "1", "--n", "4", "--reps", "1", "--seed", "7",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    text = capsys.readouterr().out
    sd_line = next(l for l in text.splitlines() if l.startswith("Standard Deviation"))
    assert sd_line.split()[2:] == ["0"] * 5
    for name in ("summary.csv", "summary.json", "table.txt", "manifest.json"):
        assert (tmp_path / name).exists()


def test_simulate_byte_identical(tmp_path):
    args = ["simulate", "--model", "2", "--n", "4", "--reps", "3", "--seed", "11"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out-dir", str(tmp_path / "b"), "--workers", "2"]) == EXIT_OK
    for name in ("summary.csv", "summary.json", "table.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_report_rerenders(tmp_path, capsys):
    assert main(["simulate", "--model", "3", "--n", "4", "--reps", "2", "--seed", "1", "--estimators", "ols,fe3",
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    capsys.readouterr()
    assert main(["report", str(tmp_path / "summary.json")]) == EXIT_OK
    assert capsys.readouterr().out == (tmp_path / "table.txt").read_text()
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert main(["report", str(junk)]) == EXIT_DATA


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "panelpost.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("panelpost ")
