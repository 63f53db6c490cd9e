from __future__ import annotations

import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from fgbm.cli import main
from fgbm.market import bs_closed_form


def run(*argv):
    return main([str(a) for a in argv])


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_synth_is_byte_reproducible(tmp_path):
    flags = ["synth", "--hurst", 0.5, "--method", "cholesky", "--paths", 1, "--seed", 7]
    assert run(*flags, "--out", tmp_path / "a") == 0
    assert run(*flags, "--out", tmp_path / "b") == 0
    for name in ("paths_hi.csv", "paths_lo.csv", "stats.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_format(tmp_path):
    assert run("synth", "--hurst", 0.3, "--paths", 3, "--grid-n", 8, "--seed", 1, "--out", tmp_path) == 0
    raw = (tmp_path / "paths_hi.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    rows = raw.decode().splitlines()
    assert rows[0] == "t,path_0,path_1,path_2"
    assert len(rows) == 10
    assert float(rows[1].split(",")[1]) == 0.0


def test_wavelet_and_moving_average_agree_in_stats(tmp_path):
    common = ["synth", "--hurst", 0.7, "--paths", 200, "--grid-n", 16, "--seed", 3]
    assert run(*common, "--method", "wavelet", "--levels", 10, "--out", tmp_path / "w") == 0
    assert run(*common, "--method", "movavg", "--out", tmp_path / "m") == 0
    w = json.loads((tmp_path / "w" / "stats.json").read_text())
    m = json.loads((tmp_path / "m" / "stats.json").read_text())
    tol = w["documented_tolerance"]
    for label in w["scenarios"]:
        a = np.array(w["scenarios"][label]["method_covariance"])
        b = np.array(m["scenarios"][label]["method_covariance"])
        assert np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(b**2)) < tol
        assert w["scenarios"][label]["method_rms_vs_closed_form"] < tol


def test_upper_lower_in_stats(tmp_path):
    assert run("synth", "--hurst", 0.5, "--method", "cholesky", "--paths", 50, "--grid-n", 4, "--out", tmp_path) == 0
    s = json.loads((tmp_path / "stats.json").read_text())
    assert np.all(np.array(s["upper_covariance"]) >= np.array(s["lower_covariance"]))


@pytest.mark.parametrize("bad", [["--hurst", "1.0"], ["--hurst", "0"], ["--sigma-lo", "0.5", "--sigma-hi", "0.2"],
                                 ["--paths", "0"], ["--method", "fft"]])
def test_bad_flags_exit_one_without_output(tmp_path, bad):
    out = tmp_path / "o"
    assert run("synth", *bad, "--out", out) == 1
    assert not (out / "manifest.json").exists()


def test_pde_engine_rejects_fractional_hurst(tmp_path, capsys):
    assert run("price", "--engine", "pde", "--hurst", 0.7, "--out", tmp_path) == 1
    assert "H = 1/2" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_price_degenerate_band(tmp_path):
    assert run("price", "--engine", "closed-form", "--hurst", 0.5, "--sigma-lo", 0.2, "--sigma-hi", 0.2,
               "--out", tmp_path) == 0
    q = json.loads((tmp_path / "quote.json").read_text())
    assert abs(q["bid"] - q["ask"]) <= q["spread_tolerance"]
    assert q["bid"] == bs_closed_form(100, 100, 0.0, 0.04, 1.0)


def test_price_mc_strict_spread(tmp_path):
    assert run("price", "--engine", "mc", "--hurst", 0.5, "--sigma-lo", 0.1, "--sigma-hi", 0.3, "--paths", 20000,
               "--seed", 2, "--out", tmp_path) == 0
    q = json.loads((tmp_path / "quote.json").read_text())
    assert q["bid"] - q["ask"] > q["spread_tolerance"]
    assert q["attaining_scenario_bid"] == "ConstantHi(0.3)"
    assert q["config"]["engine"] == "ScenarioMC"


def test_price_pde(tmp_path):
    assert run("price", "--engine", "pde", "--hurst", 0.5, "--grid-n", 400, "--out", tmp_path) == 0
    q = json.loads((tmp_path / "quote.json").read_text())
    assert q["bid"] == pytest.approx(bs_closed_form(100, 100, 0, 0.09, 1), rel=5e-3)
    assert q["ask"] == pytest.approx(bs_closed_form(100, 100, 0, 0.01, 1), rel=5e-3)


@pytest.mark.parametrize("suite", ["wick", "girsanov", "lrd"])
def test_verify_suites(tmp_path, suite, capsys):
    assert run("verify", suite, "--quick", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / f"report_{suite}.json").read_text())
    assert rep["passed"] and rep["checks"]
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)
    names = {c["name"] for c in rep["checks"]}
    if suite == "wick":
        assert any(n.startswith("int_B_dB") for n in names)
    if suite == "girsanov":
        assert "identity_H0.5" in names
    if suite == "lrd":
        assert {"lag1_H0.3", "lag10_H0.7", "zero_at_half"} <= names


def test_verify_unknown_suite(tmp_path):
    assert run("verify", "nope", "--out", tmp_path) == 1


def test_manifest_digests_and_replay(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("hurst = 0.3\ngrid.n = 8\n")
    out = tmp_path / "first"
    assert run("synth", "--config", cfg, "--paths", 4, "--seed", 11, "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "synth" and man["seed"] == 11 and man["config"]["hurst"] == 0.3
    for entry in man["outputs"]:
        assert digest(out / entry["file"]) == entry["sha256"]
    assert {"numpy", "scipy", "python", "fgbm"} <= set(man["versions"])
    cfg.unlink()  # the manifest alone must suffice
    again = tmp_path / "second"
    assert run("replay", out / "manifest.json", "--out", again) == 0
    for entry in man["outputs"]:
        assert digest(again / entry["file"]) == entry["sha256"]


def test_threads_do_not_change_output(tmp_path, monkeypatch):
    flags = ["synth", "--hurst", 0.7, "--paths", 2500, "--grid-n", 8, "--seed", 5]
    assert run(*flags, "--threads", 1, "--out", tmp_path / "a") == 0
    monkeypatch.setenv("FGBM_THREADS", "3")
    assert run(*flags, "--out", tmp_path / "b") == 0
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["config"]["threads"] == 3
    for name in ("paths_hi.csv", "paths_lo.csv"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fgbm.cli", "synth", "--hurst", "1.5", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 1 and res.stderr
    res = subprocess.run([sys.executable, "-m", "fgbm.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "synth" in res.stdout
