import numpy as np
import pytest
from hypothesis import given, strategies as st

from bltrec import data as DT
from bltrec.errors import DatasetError, DatasetVersionError, ValidationError
from bltrec.mesh import boundary_sensors


def test_extreme_draws():
    assert DT.apply_noise([1.0], 0.01, [1.0])[0] == pytest.approx(1.01, abs=1e-15)
    assert DT.apply_noise([1.0], 0.01, [0.0])[0] == pytest.approx(0.99, abs=1e-15)


def test_zero_delta_is_identity():
    phi = np.random.default_rng(3).normal(size=50)
    d = DT.add_noise(phi, 0.0, seed=1)
    assert np.array_equal(d.noisy, phi)


def test_negative_delta():
    with pytest.raises(ValidationError):
        DT.add_noise([1.0], -0.1)


def test_deterministic():
    phi = np.linspace(1, 2, 200)
    a = DT.add_noise(phi, 0.01, seed=42).noisy
    b = DT.add_noise(phi, 0.01, seed=42).noisy
    c = DT.add_noise(phi, 0.01, seed=43).noisy
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_generator_stream_is_pinned():
    # first draw of PCG64(SeedSequence(0)); changes here break fixtures
    assert DT.rng_for(0).random() == pytest.approx(0.6369616873214543, abs=0)


@given(phi=st.lists(st.floats(-1e3, 1e3).filter(lambda x: abs(x) > 1e-6), min_size=1, max_size=50),
       delta=st.floats(0, 0.5), seed=st.integers(0, 2**63))
def test_relative_bound(phi, delta, seed):
    d = DT.add_noise(phi, delta, seed)
    phi = np.asarray(phi)
    assert np.all(np.abs(d.noisy - phi) <= delta * np.abs(phi) * (1 + 1e-12))


def test_norms_recorded():
    d = DT.add_noise(np.ones(100), 0.01, 0)
    n = d.norms()
    assert n["max_rel"] <= 0.01 and n["l2_abs"] > 0


def test_round_trip(tmp_path):
    s = boundary_sensors(3.0, 200)
    d = DT.add_noise(np.exp(np.sin(np.arange(200.0))), 0.01, seed=7)
    p = tmp_path / "d.txt"
    DT.save_dataset(p, d, s, domain={"R": 3.0, "dim": 2})
    back, sens, header = DT.load_dataset(p)
    assert np.array_equal(back.clean, d.clean)
    assert np.array_equal(back.noisy, d.noisy)
    assert np.array_equal(sens.points, s.points)
    assert header["seed"] == 7 and back.delta == 0.01


def test_truncated(tmp_path):
    s = boundary_sensors(3.0, 10)
    p = tmp_path / "d.txt"
    DT.save_dataset(p, DT.add_noise(np.ones(10), 0.01), s)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(DatasetError, match="line 10"):
        DT.load_dataset(p)


def test_malformed_number(tmp_path):
    s = boundary_sensors(3.0, 3)
    p = tmp_path / "d.txt"
    DT.save_dataset(p, DT.add_noise(np.ones(3), 0.01), s)
    lines = p.read_text().splitlines()
    lines[3] = lines[3].replace("0x", "zz", 1)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="line 4"):
        DT.load_dataset(p)


def test_version_mismatch(tmp_path):
    p = tmp_path / "d.txt"
    p.write_text("BLTDATA 2\n{}\n")
    with pytest.raises(DatasetVersionError):
        DT.load_dataset(p)


def test_csv(tmp_path):
    s = boundary_sensors(3.0, 4)
    DT.save_csv(tmp_path / "g.csv", DT.add_noise(np.ones(4), 0.0), s)
    assert (tmp_path / "g.csv").read_text().splitlines()[1].startswith("0,3.0,0.0,1.0")
