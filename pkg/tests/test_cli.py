from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from spde_fd.cli import DEFAULT_CONFIG, EXIT_ASSERT, EXIT_CONFIG, EXIT_LEMMA, EXIT_OK, main


def _run(tmp_path, *argv):
    return main([*argv, "--output-dir", str(tmp_path)])


def _csv_body(path):
    return [l for l in path.read_text().splitlines() if not l.startswith("#")]


def test_converge_level_equal_to_reference(tmp_path):
    code = _run(tmp_path, "converge", "--levels", "4", "--ref", "4", "--samples", "3", "--horizon", "0.0625",
                "--workers", "1")
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "converge.json").read_text())
    assert doc["degenerate"] and doc["slope"] is None
    assert doc["per_level"][0]["error"] == 0.0
    assert doc["provenance"]["config"]["plan"]["reference_n"] == 4
    assert _csv_body(tmp_path / "converge.csv")[0] == "n,error,stderr"


def test_converge_small_plan_has_slope(tmp_path):
    code = _run(tmp_path, "converge", "--levels", "4,8", "--ref", "16", "--samples", "20", "--horizon", "0.0625",
                "--workers", "1")
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "converge.json").read_text())
    assert doc["slope"] < 0


def test_converge_assert_band_exit_code(tmp_path):
    code = _run(tmp_path, "converge", "--levels", "4", "--ref", "8", "--samples", "3", "--horizon", "0.0625",
                "--workers", "1", "--assert")
    assert code == EXIT_ASSERT


def test_missing_config_file(tmp_path):
    assert _run(tmp_path, "converge", "--config", str(tmp_path / "nope.json")) == EXIT_CONFIG


def test_bad_config_documents(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert _run(tmp_path, "verify", "--config", str(bad)) == EXIT_CONFIG
    bad.write_text(json.dumps({"grid": {"zz": 1}}))
    assert _run(tmp_path, "verify", "--config", str(bad)) == EXIT_CONFIG
    bad.write_text(json.dumps({"nosuch": {}}))
    assert _run(tmp_path, "verify", "--config", str(bad)) == EXIT_CONFIG
    assert _run(tmp_path, "simulate", "--grid-n", "abc") == EXIT_CONFIG
    assert _run(tmp_path, "simulate", "--c", "0.6") == EXIT_CONFIG


def test_flags_beat_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"grid": {"n": 4}, "plan": {"horizon": 0.0625, "seed": 1}}))
    assert _run(tmp_path, "simulate", "--config", str(cfg), "--n", "8") == EXIT_OK
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["grid"]["n"] == 8
    assert man["config"]["plan"]["seed"] == 1
    assert man["schema_version"] == "spde-fd-output/1" and man["build"]


def test_ou_error_default_sweep(tmp_path):
    assert _run(tmp_path, "ou-error", "--assert") == EXIT_OK
    doc = json.loads((tmp_path / "ou_error.json").read_text())
    assert -1.2 <= doc["slopes"]["0.25"] <= -0.8
    assert _csv_body(tmp_path / "ou_error.csv")[0] == "n,t,error_sq"


def test_ou_error_skips_t_below_h(tmp_path):
    assert _run(tmp_path, "ou-error", "--plan-ou-t", "0.0001,0.25") == EXIT_OK
    doc = json.loads((tmp_path / "ou_error.json").read_text())
    assert any("below h" in note for note in doc["notes"])
    # 1e-4 is not a grid time at the finer levels either
    assert [row[0] for row in doc["rows"]] == [8, 16, 32, 64]
    assert all(row[1] == 0.25 for row in doc["rows"])


def test_ou_error_is_seed_invariant(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(a, "ou-error", "--seed", "1") == EXIT_OK
    assert _run(b, "ou-error", "--seed", "2") == EXIT_OK
    assert _csv_body(a / "ou_error.csv") == _csv_body(b / "ou_error.csv")


def test_verify_defaults_pass(tmp_path):
    assert _run(tmp_path, "verify") == EXIT_OK
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["all_pass"] and len(doc["checks"]) >= 8


def test_verify_zero_tolerance_fails(tmp_path):
    assert _run(tmp_path, "verify", "--only", "semigroup", "--tolerances-exact", "0") == EXIT_LEMMA


def test_verify_only_cfl(tmp_path):
    assert _run(tmp_path, "verify", "--only", "cfl") == EXIT_OK
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert [c["id"] for c in doc["checks"]] == ["cfl"]


def test_verify_empty_sweep(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"grid": {"n_list": [], "small_n_list": []}}))
    assert _run(tmp_path, "verify", "--config", str(cfg)) == EXIT_OK
    assert json.loads((tmp_path / "verify.json").read_text())["checks"] == []


def _snapshots(d):
    return sorted(d.glob("snapshot_*.csv"))


def test_simulate_horizon_zero_echoes_initial(tmp_path):
    assert _run(tmp_path, "simulate", "--horizon", "0", "--n", "8") == EXIT_OK
    (snap,) = _snapshots(tmp_path)
    rows = np.array([[float(v) for v in l.split(",")] for l in _csv_body(snap)[1:]])
    np.testing.assert_array_equal(rows[:, 1], np.sin(2 * np.pi * rows[:, 0]))


def test_simulate_same_seed_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert _run(d, "simulate", "--horizon", "0.0625", "--seed", "4") == EXIT_OK
    for fa, fb in zip(_snapshots(a), _snapshots(b)):
        assert _csv_body(fa) == _csv_body(fb)


def test_simulate_sign_drift_rows(tmp_path):
    assert _run(tmp_path, "simulate", "--drift", "sign", "--n", "16", "--horizon", "0.0625") == EXIT_OK
    snaps = _snapshots(tmp_path)
    assert len(snaps) == 2
    for s in snaps:
        lines = s.read_text().splitlines()
        assert lines[0].startswith("# schema_version:")
        body = _csv_body(s)
        assert body[0] == "x,u" and len(body) == 1 + 32


def test_simulate_off_grid_horizon(tmp_path):
    assert _run(tmp_path, "simulate", "--horizon", "0.01") == EXIT_CONFIG


def test_noise_dump_and_load(tmp_path, capsys):
    path = tmp_path / "n.bin"
    assert _run(tmp_path, "noise", "dump", str(path), "--n", "4", "--horizon", "0.0625", "--seed", "3") == EXIT_OK
    capsys.readouterr()
    assert _run(tmp_path, "noise", "load", str(path)) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["n"] == 4 and summary["seed"] == 3 and summary["steps"] == 16
    path.write_bytes(b"garbage")
    assert _run(tmp_path, "noise", "load", str(path)) == EXIT_CONFIG
    assert _run(tmp_path, "noise", "load", str(tmp_path / "missing.bin")) == EXIT_CONFIG


def test_every_default_key_has_a_flag():
    from spde_fd.cli import build_parser

    help_text = build_parser()._subparsers._group_actions[0].choices["converge"].format_help()
    for sec, vals in DEFAULT_CONFIG.items():
        for key in vals:
            assert f"--{sec}-{key.replace('_', '-')}" in help_text


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "spde_fd", "verify", "--only", "cfl", "--output-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "verify.json").exists()
