import json

import pytest

from bltrec import config as C
from bltrec.errors import ValidationError


@pytest.mark.parametrize("name", C.EXAMPLES)
def test_builtin_examples_validate(name):
    cfg = C.builtin_config(name)
    assert cfg["name"] == name
    assert cfg["noise"] == {"delta": 0.01, "seed": 0}
    assert cfg["sensors"]["M"] == 200


def test_exactly_seven_examples():
    assert C.list_examples() == [f"ex6_{i}" for i in range(1, 8)]


@pytest.mark.parametrize("path", [(), ("domain",), ("lm",), ("noise",)])
def test_unknown_keys_rejected(path):
    cfg = C.builtin_config("ex6_1")
    node = cfg
    for k in path:
        node = node[k]
    node["typo_key"] = 1
    with pytest.raises(ValidationError, match="typo_key"):
        C.validate_config(cfg)


def test_unknown_shape_key_rejected():
    cfg = C.builtin_config("ex6_1")
    cfg["true_source"]["layers"][0]["shape"]["radiuss"] = 1.0
    with pytest.raises(ValidationError):
        C.validate_config(cfg)


def test_unknown_preset_rejected():
    cfg = C.builtin_config("ex6_2")
    cfg["media"]["background"] = "bone"
    with pytest.raises(ValidationError, match="media/background"):
        C.validate_config(cfg)


def test_round_trip(tmp_path):
    cfg = C.builtin_config("ex6_5")
    C.save_config(cfg, tmp_path / "c.json")
    assert C.load_config(tmp_path / "c.json") == cfg


def test_missing_file_names_path(tmp_path):
    p = tmp_path / "missing.json"
    with pytest.raises(ValidationError, match="missing.json"):
        C.load_config(p)


def test_bad_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "name": "x",\n oops\n}')
    with pytest.raises(ValidationError, match="line 3"):
        C.load_config(p)


def test_overrides_do_not_mutate():
    cfg = C.builtin_config("ex6_1")
    new = C.with_overrides(cfg, seed=5, mesh_h=0.2, out="x")
    assert new["noise"]["seed"] == 5 and new["domain"]["h"] == 0.2 and new["output"]["dir"] == "x"
    assert cfg["noise"]["seed"] == 0
    C.validate_config(new)


def test_unknown_example():
    with pytest.raises(ValidationError, match="unknown example"):
        C.builtin_config("ex6_8")


@pytest.mark.parametrize("name", ["cgo_sector2d", "cgo_poly3d"])
def test_cgo_configs_validate(name):
    from importlib import resources

    cfg = json.loads(resources.files("bltrec").joinpath("configs", f"{name}.json").read_text())
    C.validate_config(cfg, "cgo")
    cfg["extra"] = 0
    with pytest.raises(ValidationError):
        C.validate_config(cfg, "cgo")
