import json
import os
import subprocess
import sys

import pytest

from bltrec import cli
from bltrec import config as C
from bltrec.errors import SolverError


def write_cfg(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    C.save_config(cfg, p)
    return str(p)


@pytest.fixture
def small(tmp_path):
    cfg = C.with_overrides(C.builtin_config("ex6_6"), mesh_h=0.3)
    cfg["lm"]["max_iter"] = 2
    return write_cfg(tmp_path, cfg)


def test_example_list(capsys):
    assert cli.main(["example", "--list"]) == 0
    assert capsys.readouterr().out.split() == list(C.EXAMPLES)


def test_missing_config_exit_1(capsys):
    assert cli.main(["invert", "--config", "missing.json"]) == 1
    assert "missing.json" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["invert", "--config", "x.json", "--bogus"],
    ["frobnicate"],
    ["example"],
    ["invert"],
    ["invert", "--config", "x.json", "--seed", "abc"],
    ["cgo-verify", "--config", "x.json", "--mesh-h", "0.1"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert cli.main(argv) == 1
    assert capsys.readouterr().err


def test_invalid_config_exit_1(tmp_path, capsys):
    cfg = C.builtin_config("ex6_1")
    cfg["lm"]["betta"] = 1
    assert cli.main(["invert", "--config", write_cfg(tmp_path, cfg)]) == 1
    assert "betta" in capsys.readouterr().err


def test_numerical_failure_exit_2(small, monkeypatch, capsys):
    from bltrec import experiments

    def boom(*a, **k):
        raise SolverError("[inversion] CG did not converge")

    monkeypatch.setattr(experiments, "run_experiment", boom)
    assert cli.main(["invert", "--config", small, "--quiet"]) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_invert_writes_outputs(small, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["invert", "--config", small, "--out", str(out), "--seed", "3", "--quiet"]) == 0
    rows = dict(line.split("\t", 1) for line in capsys.readouterr().out.splitlines())
    assert rows["name"] == "ex6_6" and rows["out"] == str(out)
    for f in ("config.json", "trace.csv", "summary.json", "fields.vtk", "measurement.csv", "history.png"):
        assert (out / f).is_file()
    assert json.loads((out / "config.json").read_text())["noise"]["seed"] == 3


def test_forward(small, tmp_path, capsys):
    out = tmp_path / "fwd"
    assert cli.main(["forward", "--config", small, "--out", str(out), "--quiet"]) == 0
    assert (out / "measurement.csv").is_file() and (out / "data.txt").is_file()
    assert "sensors\t200" in capsys.readouterr().out


def test_mesh_info(small, tmp_path, capsys):
    assert cli.main(["mesh-info", "--config", small, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "inversion.nodes\t" in out and "data.nodes\t" in out
    info = json.loads((tmp_path / "mesh_info.json").read_text())
    assert info["inversion"]["problems"] == [] and info["data"]["nodes"] > info["inversion"]["nodes"]


def test_cgo_verify(tmp_path, capsys):
    from importlib import resources

    cfg = json.loads(resources.files("bltrec").joinpath("configs", "cgo_sector2d.json").read_text())
    p = tmp_path / "cone2d.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "cgo"
    assert cli.main(["cgo-verify", "--config", str(p), "--out", str(out)]) == 0
    for f in ("decay.json", "decay.csv", "decay.png"):
        assert (out / f).is_file()
    assert "flag_harmonic\tTrue" in capsys.readouterr().out


def test_example_ex6_1(tmp_path):
    out = tmp_path / "e1"
    assert cli.main(["example", "ex6_1", "--out", str(out), "--quiet"]) == 0
    assert (out / "summary.json").is_file()


def test_out_root_env(small, tmp_path, monkeypatch):
    monkeypatch.setenv("BLTREC_OUT_ROOT", str(tmp_path / "root"))
    assert cli.main(["forward", "--config", small, "--quiet"]) == 0
    assert (tmp_path / "root" / "ex6_6_forward" / "data.txt").is_file()


def test_threads_env(monkeypatch):
    monkeypatch.setenv("BLTREC_THREADS", "1")
    for v in cli._THREAD_VARS:
        monkeypatch.delenv(v, raising=False)
    cli._apply_threads()
    assert all(os.environ[v] == "1" for v in cli._THREAD_VARS)


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "bltrec.cli", "example", "--list"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and len(r.stdout.split()) == 7
