"""Command line front end: exit codes, artifacts, reproducibility."""

import csv
import json
import math

import pytest

from tcbm.cli import main


def _run(*argv):
    return main(list(argv))


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_missing_seed_is_config_error(tmp_path, capsys):
    code = _run("simulate", "--out", str(tmp_path))
    assert code == 2
    assert "seed" in capsys.readouterr().err


def test_malformed_config_negative_x(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("seed = 1\nx = -1.0\n")
    code = _run("optimize", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 2
    err = capsys.readouterr().err
    assert "wealth" in err or "x" in err


def test_invalid_toml(tmp_path):
    cfg = tmp_path / "broken.toml"
    cfg.write_text("seed = [unclosed\n")
    assert _run("simulate", "--config", str(cfg)) == 2


def test_verify_cov_constant_exact(tmp_path):
    out = tmp_path / "vc"
    code = _run("verify-cov", "--seed", "3", "--paths", "40", "--serial",
                "--out", str(out))
    assert code == 0
    rows = _read_csv(out / "results.csv")
    assert len(rows) == 40
    assert all(float(r["abs_diff"]) <= 1e-12 for r in rows)
    summary = _read_json(out / "summary.json")
    assert summary["passed"] and summary["rms"] <= 1e-12


def test_optimize_identity_clock(tmp_path):
    cfg = tmp_path / "opt.toml"
    cfg.write_text(
        'experiment_id = "p2"\nseed = 5\npaths = 1500\n'
        "x = 1.0\np = 2.0\nhorizon = 1.0\njump_count = 0\n")
    out = tmp_path / "opt"
    assert _run("optimize", "--config", str(cfg), "--out", str(out)) == 0
    summary = _read_json(out / "summary.json")
    assert summary["closed_form"] == pytest.approx(-math.exp(-0.25), abs=1e-6)
    opt = summary["strategies"]["optimal"]
    assert abs(opt["gap_vs_closed_form"]) <= 3.0 * opt["gap_stderr"]
    assert all(e["dominated"] for t, e in summary["strategies"].items()
               if t != "optimal")
    rows = _read_csv(out / "results.csv")
    assert {r["strategy_tag"] for r in rows} == {
        "optimal", "scaled:0.5", "scaled:1.5", "constant_amount:0.25",
        "buy_hold:0.5"}


def test_convergence_needs_four_levels(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 1\ndeltas = [0.1, 0.05]\n")
    assert _run("convergence", "--config", str(cfg),
                "--out", str(tmp_path / "c")) == 2


def test_convergence_slope_failure_is_exit_1(tmp_path):
    # demand an impossible slope so the band fails numerically
    cfg = tmp_path / "c.toml"
    cfg.write_text('seed = 2\npaths = 10\nformula = "forward"\n'
                   'case = "m_left"\njump_count = 2\nslope_min = 5.0\n')
    out = tmp_path / "c"
    assert _run("convergence", "--config", str(cfg), "--out", str(out)) == 1
    summary = _read_json(out / "summary.json")
    assert not summary["passed"] and summary["slope"] < 5.0


def test_martingale_adversarial_drift_fails(tmp_path):
    cfg = tmp_path / "m.toml"
    cfg.write_text("seed = 4\npaths = 8000\njump_count = 0\ndrift = 0.1\n")
    assert _run("martingale-test", "--config", str(cfg),
                "--out", str(tmp_path / "m")) == 1


def test_martingale_clean_passes(tmp_path):
    cfg = tmp_path / "m.toml"
    cfg.write_text("seed = 4\npaths = 3000\npoisson_rate = 2.0\n")
    out = tmp_path / "m"
    assert _run("martingale-test", "--config", str(cfg), "--out", str(out)) == 0
    rows = _read_csv(out / "results.csv")
    stats = {r["statistic"] for r in rows}
    assert {"mean", "one", "sign", "clip", "variance"} <= stats


def test_serial_reruns_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert _run("simulate", "--seed", "7", "--paths", "60", "--serial",
                    "--out", str(out)) == 0
        outs.append(out)
    for fname in ("results.csv", "summary.json", "manifest.json"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_parallel_matches_serial(tmp_path):
    serial = tmp_path / "s"
    parallel = tmp_path / "p"
    assert _run("simulate", "--seed", "7", "--paths", "60", "--serial",
                "--out", str(serial)) == 0
    assert _run("simulate", "--seed", "7", "--paths", "60", "--workers", "4",
                "--out", str(parallel)) == 0
    assert (serial / "results.csv").read_bytes() == \
        (parallel / "results.csv").read_bytes()


def test_manifest_contents(tmp_path):
    out = tmp_path / "m"
    assert _run("simulate", "--seed", "9", "--paths", "10", "--serial",
                "--out", str(out)) == 0
    manifest = _read_json(out / "manifest.json")
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 9
    assert manifest["serial"] is True
    assert len(manifest["config_sha256"]) == 64
    assert manifest["config"]["paths"] == 10


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text("seed = 1\npaths = 5\n")
    out = tmp_path / "o"
    assert _run("simulate", "--config", str(cfg), "--paths", "9",
                "--serial", "--out", str(out)) == 0
    assert len(_read_csv(out / "results.csv")) == 9
