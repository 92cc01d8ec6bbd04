"""
Synthetic noisy measurements and dataset files.

Noise follows ``Phi_delta = Phi * (1 + delta * (2 r - 1))`` with ``r``
uniform on ``[0, 1)`` drawn elementwise from numpy's PCG64 bit generator
seeded through ``SeedSequence(seed)``.  PCG64 is portable and its stream
is fixed across platforms; ``SeedSequence`` allows independent child
streams (``spawn``) without seed collisions.

Dataset file layout (text, UTF-8)::

    BLTDATA 1
    {"delta": ..., "seed": ..., "M": ..., "dim": ..., "domain": {...}, ...}
    <M lines: sensor coordinates, clean value, noisy value as hex floats>
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError, DatasetVersionError, ValidationError
from .fem import write_measurement_csv
from .mesh import SensorSet

DATASET_TAG = "BLTDATA"
DATASET_VERSION = 1
DEFAULT_DELTA = 0.01
GENERATOR = "numpy PCG64 seeded via SeedSequence"


@dataclass(frozen=True, eq=False)
class NoisyData:
    clean: np.ndarray
    noisy: np.ndarray
    delta: float
    seed: int | None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("clean", "noisy"):
            a = np.array(getattr(self, name), float, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.clean.shape != self.noisy.shape:
            raise ValidationError("clean and noisy vectors differ in length")

    @property
    def M(self):
        return self.clean.size

    def norms(self):
        """Absolute L2 and max relative deviation, recorded side by side."""
        diff = self.noisy - self.clean
        nz = self.clean != 0
        rel = np.max(np.abs(diff[nz] / self.clean[nz])) if nz.any() else 0.0
        return {"l2_abs": float(np.linalg.norm(diff)),
                "l2_rel": float(np.linalg.norm(diff) / max(np.linalg.norm(self.clean), 1e-300)),
                "max_rel": float(rel)}


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def apply_noise(Phi, delta, r):
    """``Phi * (1 + delta * (2 r - 1))`` for given uniform draws ``r``."""
    Phi = np.asarray(Phi, float)
    return Phi * (1.0 + delta * (2.0 * np.asarray(r, float) - 1.0))


def add_noise(Phi, delta=DEFAULT_DELTA, seed=0):
    """Multiplicative uniform noise of relative size at most ``delta``."""
    if not delta >= 0:
        raise ValidationError(f"delta must be >= 0, got {delta}")
    Phi = np.asarray(Phi, float)
    if delta == 0:
        return NoisyData(Phi, Phi.copy(), 0.0, seed)
    r = rng_for(seed).random(Phi.size)
    return NoisyData(Phi, apply_noise(Phi, delta, r), float(delta), seed)


def _hex(x):
    return float(x).hex()


def save_dataset(path, data, sensors, domain=None, extra=None):
    header = {
        "delta": data.delta, "seed": data.seed, "M": data.M, "dim": sensors.dim,
        "domain": domain or {}, "generator": GENERATOR, "noise_norms": data.norms(),
    }
    if extra:
        header.update(extra)
    lines = [f"{DATASET_TAG} {DATASET_VERSION}", json.dumps(header, sort_keys=True)]
    for p, c, n in zip(sensors.points, data.clean, data.noisy):
        lines.append(" ".join([*map(_hex, p), _hex(c), _hex(n)]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path):
    """Read a dataset file.

    Returns
    -------
    (NoisyData, SensorSet, header dict)

    Raises
    ------
    DatasetVersionError
        On an unknown version tag.
    DatasetError
        On malformed content; the message names the line.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: line 1: empty file")
    tag = lines[0].split()
    if len(tag) != 2 or tag[0] != DATASET_TAG:
        raise DatasetError(f"{path}: line 1: expected '{DATASET_TAG} <version>'")
    if tag[1] != str(DATASET_VERSION):
        raise DatasetVersionError(f"{path}: line 1: unsupported dataset version {tag[1]!r} "
                                  f"(this reader handles {DATASET_VERSION})")
    if len(lines) < 2:
        raise DatasetError(f"{path}: line 2: missing JSON header")
    try:
        header = json.loads(lines[1])
        M, dim = int(header["M"]), int(header["dim"])
    except (ValueError, KeyError, TypeError) as e:
        raise DatasetError(f"{path}: line 2: bad header ({e})") from None
    rows = []
    for k in range(M):
        lineno = k + 3
        if lineno > len(lines):
            raise DatasetError(f"{path}: line {lineno}: truncated, expected {M} data rows")
        parts = lines[lineno - 1].split()
        if len(parts) != dim + 2:
            raise DatasetError(f"{path}: line {lineno}: expected {dim + 2} fields, got {len(parts)}")
        try:
            rows.append([float.fromhex(x) for x in parts])
        except ValueError:
            raise DatasetError(f"{path}: line {lineno}: malformed number") from None
    if any(s.strip() for s in lines[M + 2:]):
        raise DatasetError(f"{path}: line {M + 3}: unexpected trailing content")
    arr = np.array(rows, float).reshape(M, dim + 2)
    data = NoisyData(arr[:, dim], arr[:, dim + 1], float(header["delta"]), header.get("seed"))
    return data, SensorSet(arr[:, :dim]), header


def save_csv(path, data, sensors):
    """Noisy values in the measurement CSV layout."""
    write_measurement_csv(path, sensors.points, data.noisy)
