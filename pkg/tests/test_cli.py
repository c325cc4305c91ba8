import csv
import json

import numpy as np
import pytest

from vem.cli import EXIT_OK, EXIT_USAGE, main


def _read_trace(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float), rows[-1]


def test_list_text(capsys):
    assert main(["list"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("ex1", "ex2", "zero-cost", "dirichlet", "catenary-like"):
        assert name in out


def test_list_json(capsys):
    assert main(["list", "--json"]) == EXIT_OK
    rows = {r["name"]: r for r in json.loads(capsys.readouterr().out)}
    assert (rows["ex1"]["n"], rows["ex1"]["m"], rows["ex1"]["terminal_time"]) == (2, 1, "Fixed")
    assert (rows["ex2"]["n"], rows["ex2"]["m"], rows["ex2"]["terminal_time"]) == (3, 1, "Free")


def test_unknown_problem_lists_registry(capsys, tmp_path):
    assert main(["solve", "--problem", "nope", "--out", str(tmp_path)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "nope" in err and "ex1" in err and "catenary-like" in err


@pytest.mark.parametrize("argv", [[], ["solve"], ["solve", "--problem", "ex1", "--nodes", "x"], ["solve", "--problem", "ex1", "--gain", "-1"]])
def test_usage_errors(argv, tmp_path):
    assert main(argv + (["--out", str(tmp_path)] if argv else [])) == EXIT_USAGE


@pytest.mark.parametrize("cmd", ["solve", "verify"])
def test_bad_tf_init_is_usage_error(cmd, tmp_path):
    assert main([cmd, "--problem", "ex2", "--tf-init", "-1", "--out", str(tmp_path)]) == EXIT_USAGE


SHORT = ["--problem", "ex1", "--nodes", "21", "--tau-end", "5", "--record-every", "1"]


def test_solve_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", *SHORT, "--out", str(out), "--json"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    header, data, last = _read_trace(out / "trace.csv")
    assert header == ["tau", "J", "stationarity", "transversality", "tf", "feas_defect"]
    assert np.all(np.diff(data[:, 1]) <= 0)
    snaps = sorted(out.glob("snapshot_*.csv"))
    assert len(snaps) == len(data)
    with open(snaps[0]) as fh:
        assert next(csv.reader(fh)) == ["t", "x1", "x2", "u1"]
    # every number in the summary appears in the final trace row
    for key in ("tau", "J", "stationarity", "transversality", "tf"):
        assert summary[key] in last
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["problem"] == "ex1"
    assert manifest["config"]["nodes"] == 21 and manifest["config"]["gain"] == 2e-2
    assert len(manifest["config_hash"]) == 64
    assert "version" in manifest


def test_manifest_reproduces_trace_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", *SHORT, "--out", str(a)]) == EXIT_OK
    assert main(["solve", "--config", str(a / "manifest.json"), "--out", str(b)]) == EXIT_OK
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    ma, mb = json.loads((a / "manifest.json").read_text()), json.loads((b / "manifest.json").read_text())
    assert ma["config"] == mb["config"]


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"problem": "ex1", "config": {"nodes": 31, "tau_end": 2.0}}))
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--nodes", "11", "--out", str(out)]) == EXIT_OK
    m = json.loads((out / "manifest.json").read_text())
    assert m["config"]["nodes"] == 11 and m["config"]["tau_end"] == 2.0


def test_restore_every_off(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--problem", "ex2", "--nodes", "11", "--tau-end", "1", "--restore-every", "off", "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "manifest.json").read_text())["config"]["restore_every"] is None


def test_solve_variational(tmp_path):
    out = tmp_path / "d"
    assert main(["solve", "--problem", "dirichlet", "--nodes", "21", "--tau-end", "5", "--out", str(out)]) == EXIT_OK
    _, data, _ = _read_trace(out / "trace.csv")
    assert np.all(np.diff(data[:, 1]) <= 1e-9 * data[:-1, 1])


def test_verify_zero_cost(tmp_path, capsys):
    assert main(["verify", "--problem", "zero-cost", "--json", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["passed"]
    assert json.loads((tmp_path / "verify.json").read_text()) == report


def test_verify_ex1_coarse_grid(capsys):
    code = main(["verify", "--problem", "ex1", "--nodes", "5", "--tau-end", "20", "--json"])
    report = json.loads(capsys.readouterr().out)
    checks = {c["name"]: c for c in report["checks"]}
    # the tolerance scales with the N^-2 error model
    gmax = float(checks["gamma_equivalence"]["detail"].split("=")[1])
    assert checks["gamma_equivalence"]["bound"] == pytest.approx(1e-3 * gmax * (60 / 4) ** 2)
    assert checks["gamma_equivalence"]["passed"]
    assert code == (EXIT_OK if report["passed"] else 3)


def test_verify_dirichlet():
    assert main(["verify", "--problem", "dirichlet", "--nodes", "21"]) == EXIT_OK
