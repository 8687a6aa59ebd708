import json

import numpy as np
import pytest

from paultrap import cli
from paultrap.crystal import coulomb_parameters, multistart
from paultrap.hill import HillParameters, monodromy


def run(tmp_path, *argv, name="out.dat"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def test_stability_writes_csv_pgm_and_manifest(tmp_path):
    code, out = run(tmp_path, "stability", "--a", "0:0.5:4", "--qm", "0:1:6", name="grid.csv")
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "a,q_M,trace,mu,class" and len(lines) == 1 + 24
    pgm = (tmp_path / "grid.pgm").read_bytes()
    assert pgm.startswith(b"P5\n6 4\n255\n") and len(pgm) == len(b"P5\n6 4\n255\n") + 24
    assert set(pgm[len(b"P5\n6 4\n255\n"):]) <= {0, 128, 255}
    manifest = json.loads((tmp_path / "grid.csv.manifest.json").read_text())
    assert manifest["config"]["omega"] == 2.0
    assert manifest["config"]["tol"] == pytest.approx(1e-11)
    assert manifest["outputs"] == ["grid.csv", "grid.pgm"]


def test_stability_pgm_only(tmp_path):
    code, out = run(tmp_path, "stability", "--a", "0:0.5:2", "--qm", "0:1:3", "--format", "pgm", name="g.pgm")
    assert code == 0 and out.read_bytes().startswith(b"P5\n3 2\n")


def test_floquet_matches_module(tmp_path):
    code, out = run(tmp_path, "floquet", "--a", "0", "--qm", "0.4", "--omega", "2")
    assert code == 0
    rec = json.loads(out.read_text())
    expected = monodromy(HillParameters(0.0, 0.4, 2.0)).to_dict()
    assert rec == json.loads(json.dumps(expected))
    assert rec["class"] == "stable"


def test_floquet_generalized_mode(tmp_path):
    code, out = run(tmp_path, "floquet", "--lam", "0.1,0.5,0.1,-0.3", "--c", "0,0,0,0")
    assert code == 0 and "trace" in json.loads(out.read_text())
    assert cli.main(["floquet", "--lam", "0.1,0.2"]) == 2


def test_crystal_matches_solver(tmp_path):
    code, out = run(tmp_path, "crystal", "--model", "coulomb", "--n", "3", "--d", "1", "--b", "1", "--ac", "1")
    assert code == 0
    rec = json.loads(out.read_text())
    assert rec["residual"] < 1e-10
    ref = multistart(coulomb_parameters(3), 1, seed=0, scale=2.0, tol=1e-10)[0]
    assert rec["positions"] == ref.positions.tolist()


def test_crystal_csv_and_calogero(tmp_path):
    code, out = run(tmp_path, "crystal", "--model", "calogero", "--n", "4", "--format", "csv")
    assert code == 0 and out.read_text().count(",") == 3
    code, out = run(tmp_path, "crystal", "--model", "calogero-printed", "--n", "3")
    assert code == 0 and json.loads(out.read_text())["consistent"] is False


def test_wavefunction_and_overlap(tmp_path):
    code, out = run(tmp_path, "wavefunction", "--qm", "0.4", "--n", "1", "--t", "0.5", "--points", "64", "--widths", "8")
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x,re,im" and len(lines) == 65
    code, out = run(tmp_path, "overlap", "--t", "0:1:3", "--n-max", "1")
    rows = out.read_text().splitlines()
    assert code == 0 and rows[0] == "t,n,re,im,abs" and len(rows) == 7


def test_propagate_outputs(tmp_path):
    code, out = run(tmp_path, "propagate", "--potential", "paul", "--t-end", "1", "--samples", "3")
    assert code == 0 and len(out.read_text().splitlines()) == 3
    code, out = run(tmp_path, "propagate", "--potential", "anharmonic", "--format", "csv", "--grid=-2:2:5")
    assert code == 0 and len(out.read_text().splitlines()) == 6


def test_oracle_check_small(tmp_path):
    code, out = run(tmp_path, "oracle-check", "--n-max", "1", "--periods", "1", "--steps", "2048")
    assert code == 0
    summary = json.loads(out.read_text().splitlines()[-1])
    assert summary["E0"] == pytest.approx(1.0, abs=1e-4)
    assert summary["max_l2_error"] < 1e-5


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\na = 0.1\nqm = 0.2\n")
    code, out = run(tmp_path, "floquet", "--config", str(cfg), "--qm", "0.3")
    assert code == 0
    manifest = json.loads((tmp_path / "out.dat.manifest.json").read_text())
    assert manifest["config"]["a"] == 0.1 and manifest["config"]["qm"] == 0.3


@pytest.mark.parametrize("argv", [
    ["nonsense"],
    ["floquet", "--bogus", "1"],
    ["floquet", "--a", "abc"],
    ["stability", "--a", "0:1"],
    ["stability", "--format", "jsonl"],
    ["crystal", "--model", "penning"],
    ["crystal", "--n", "2.5"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2
    assert "usage error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("a = 0.1\nzz = 3\n")
    assert cli.main(["floquet", "--config", str(cfg)]) == 2
    assert "zz" in capsys.readouterr().err


def test_domain_errors_exit_1(tmp_path):
    assert cli.main(["wavefunction", "--a", "0", "--qm", "0.95"]) == 1
    assert cli.main(["crystal", "--n", "3", "--b", "-1"]) == 1
    assert cli.main(["oracle-check", "--a", "-0.2", "--qm", "0"]) == 1


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("PAULTRAP_THREADS", "1")
    assert cli.worker_count() == 1
    monkeypatch.setenv("PAULTRAP_THREADS", "many")
    with pytest.raises(cli.UsageError):
        cli.worker_count()


def test_stdout_mode(capsys):
    assert cli.main(["floquet", "--a", "0.1", "--qm", "0.2"]) == 0
    captured = capsys.readouterr()
    assert json.loads(captured.out)["class"] == "stable"
    assert json.loads(captured.err)["subcommand"] == "floquet"


def test_runs_are_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    argv = ["crystal", "--n", "4", "--d", "2", "--starts", "3", "--seed", "9"]
    assert cli.main([*argv, "--out", str(a / "c.jsonl")]) == 0
    assert cli.main([*argv, "--out", str(b / "c.jsonl")]) == 0
    assert (a / "c.jsonl").read_bytes() == (b / "c.jsonl").read_bytes()
    assert (a / "c.jsonl.manifest.json").read_bytes() == (b / "c.jsonl.manifest.json").read_bytes()
