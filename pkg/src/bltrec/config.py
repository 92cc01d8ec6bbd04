"""
JSON experiment configurations: schema validation and built-in examples.

Unknown keys are rejected at every level so that a typo cannot silently
fall back to a default.
"""
from __future__ import annotations

import copy
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ValidationError

EXAMPLES = ("ex6_1", "ex6_2", "ex6_3", "ex6_4", "ex6_5", "ex6_6", "ex6_7")


@lru_cache(maxsize=None)
def schema(kind="experiment"):
    text = resources.files("bltrec").joinpath("schema", f"{kind}.schema.json").read_text()
    return json.loads(text)


def _validator(kind):
    s = schema(kind)
    cls = jsonschema.validators.validator_for(s)
    return cls(s)


def validate_config(cfg, kind="experiment", source="config"):
    """Raise ValidationError listing every schema violation of ``cfg``."""
    errs = sorted(_validator(kind).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        msgs = []
        for e in errs:
            where = "/".join(map(str, e.absolute_path)) or "<root>"
            msgs.append(f"{where}: {_best(e).message}")
        raise ValidationError(f"{source}: invalid {kind} configuration: " + "; ".join(msgs), msgs)
    return cfg


def _best(err):
    # oneOf failures bury the useful message in the closest sub-error
    if err.context:
        return jsonschema.exceptions.best_match(err.context)
    return err


def load_config(path, kind="experiment"):
    """Read and validate a JSON configuration file.

    Raises
    ------
    ValidationError
        If the file is missing, not valid JSON, or violates the schema; the
        message names the path.
    """
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{p}: configuration file not found")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{p}: line {e.lineno}: invalid JSON ({e.msg})") from None
    return validate_config(cfg, kind, str(p))


def list_examples():
    return list(EXAMPLES)


def builtin_config(name):
    """Built-in configuration for one of the seven reference examples."""
    if name not in EXAMPLES:
        raise ValidationError(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}")
    text = resources.files("bltrec").joinpath("configs", f"{name}.json").read_text()
    return validate_config(json.loads(text), source=name)


def save_config(cfg, path):
    Path(path).write_text(json.dumps(cfg, indent=2) + "\n")


def with_overrides(cfg, seed=None, mesh_h=None, out=None):
    """Copy of ``cfg`` with CLI overrides applied."""
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["noise"]["seed"] = int(seed)
    if mesh_h is not None:
        cfg["domain"]["h"] = float(mesh_h)
    if out is not None:
        cfg.setdefault("output", {})["dir"] = str(out)
    return cfg
