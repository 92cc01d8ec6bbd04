import math

import numpy as np
import pytest

from bltrec import config as C
from bltrec import experiments as X
from bltrec import fem as F
from bltrec import media as md
from bltrec import mesh as M
from bltrec import sources as S
from bltrec.errors import ValidationError

from oracles import disk_boundary_data, gauss_disk, gauss_square

HEART = md.MediaMap.uniform("heart")
A_EQ = 1 / math.sqrt(math.pi)
# Fourier-Bessel oracle value of the square/disk separation (heart, R=3, M=200)
SQUARE_DISK_ORACLE = 1.8959e-4


@pytest.fixture(scope="module")
def fine_ctx():
    mesh = M.refine_uniform(M.build_disk_mesh(3.0, 0.05))
    return F.ForwardContext(mesh, HEART, M.SensorSet(M.sensor_points(3.0, 200, 2)))


def _square():
    return S.single(S.Box([-0.5, -0.5], [1.0, 1.0]), 1.0)


def _disk(phi=1.0, r=A_EQ):
    return S.single(S.Ball([0.0, 0.0], r), phi)


def test_square_disk_oracle_value():
    t = HEART.background
    th = np.arange(200) * 2 * np.pi / 200
    pa, wa = gauss_square(1.0)
    pb, wb = gauss_disk(A_EQ)
    ga = disk_boundary_data(t.D, t.mu, 3.0, wa, pa, thetas=th)
    gb = disk_boundary_data(t.D, t.mu, 3.0, wb, pb, thetas=th)
    sep = np.linalg.norm(ga - gb) / max(np.linalg.norm(ga), np.linalg.norm(gb))
    assert sep == pytest.approx(SQUARE_DISK_ORACLE, rel=1e-3)


def test_square_vs_disk_distinguishable(fine_ctx):
    r = X.distinguishability_test(_square(), _disk(), fine_ctx)
    assert r["distinguishable"] and r["separation"] > 1e-6
    assert r["separation"] == pytest.approx(SQUARE_DISK_ORACLE, rel=0.15)


def test_identical_sources(fine_ctx):
    r = X.distinguishability_test(_disk(), _disk(), fine_ctx)
    assert r["separation"] <= 1e-12 and not r["distinguishable"]


def test_intensity_scaling_separation(fine_ctx):
    r = X.distinguishability_test(_disk(1.0, 1.0), _disk(1.1, 1.0), fine_ctx)
    assert r["separation"] == pytest.approx(0.1 / 1.1, rel=1e-9)


def test_distinguishability_rejects_inadmissible(fine_ctx):
    with pytest.raises(ValidationError, match=r"^\[distinguishability\]"):
        X.distinguishability_test(_disk(r=2.99), _disk(), fine_ctx)


def test_stage_prefix():
    with pytest.raises(ValidationError, match=r"^\[mesh\] boom"):
        with X.stage("mesh"):
            raise ValidationError("boom")


def test_stage_label_on_bad_config():
    cfg = C.builtin_config("ex6_1")
    cfg["initial_guess"]["layers"][0]["shape"]["center"] = [2.8, 0.0]
    with pytest.raises(ValidationError, match=r"^\[config\] initial guess is inadmissible") as e:
        X.prepare(cfg)
    assert e.value.stage == "config"


def small_cfg(name="ex6_6"):
    cfg = C.with_overrides(C.builtin_config(name), mesh_h=0.3)
    cfg["lm"]["max_iter"] = 3
    return cfg


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rec = X.run_experiment(small_cfg(), out)
    return rec, out


def test_manifest_files_exist(run_dir):
    rec, out = run_dir
    for f in ("config.json", "trace.csv", "summary.json", "fields.vtk", "measurement.csv",
              "reconstruction.png", "history.png", "measurement.png", "data.txt"):
        assert f in rec.manifest
    for f in rec.manifest:
        assert (out / f).is_file(), f


def test_summary_and_config_echo(run_dir):
    import json

    rec, out = run_dir
    s = json.loads((out / "summary.json").read_text())
    assert s["termination"] == rec.trace.termination
    assert s["e_r_history"][-1] == pytest.approx(rec.final_e_r)
    assert C.load_config(out / "config.json") == rec.config
    header = (out / "measurement.csv").read_text().splitlines()[0]
    assert header == "sensor_index,x,y,g_value,g_clean,g_fitted"


def test_trace_bitwise_reproducible(run_dir, tmp_path):
    _, out = run_dir
    X.run_experiment(small_cfg(), tmp_path, figures=False)
    assert (tmp_path / "trace.csv").read_bytes() == (out / "trace.csv").read_bytes()


def test_data_file_round_trip(run_dir, tmp_path):
    rec, out = run_dir
    cfg = small_cfg()
    cfg["data_file"] = str(out / "data.txt")
    rec2 = X.run_experiment(cfg, False)
    np.testing.assert_array_equal(rec2.trace.theta, rec.trace.theta)


def test_final_residual_not_above_start(run_dir):
    rec, _ = run_dir
    assert rec.trace.residual_norm[-1] <= rec.trace.residual_norm[0]
