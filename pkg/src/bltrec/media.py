"""
Optical tissue parameters and piecewise media maps.

The stationary model only needs the diffusion coefficient
``D = 1 / (3 (mu_a + mu_s'))`` and the absorption ``mu = mu_a``.
Units are whatever length unit the domain uses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class Tissue:
    """Absorption and reduced scattering coefficients of one tissue."""

    mu_a: float
    mu_s_prime: float
    name: str = ""

    def __post_init__(self):
        bad = []
        if not np.isfinite(self.mu_a) or self.mu_a < 0:
            bad.append(f"mu_a must be >= 0, got {self.mu_a}")
        if not np.isfinite(self.mu_s_prime) or self.mu_s_prime <= 0:
            bad.append(f"mu_s_prime must be > 0, got {self.mu_s_prime}")
        if bad:
            raise ValidationError("; ".join(bad), bad)

    @property
    def D(self):
        return diffusion_coeff(self)

    @property
    def mu(self):
        return self.mu_a

    def to_dict(self):
        return {"mu_a": self.mu_a, "mu_s_prime": self.mu_s_prime}


PRESETS = {
    "lung": Tissue(0.023, 2.0, "lung"),
    "muscle": Tissue(0.007, 1.031, "muscle"),
    "heart": Tissue(0.011, 1.096, "heart"),
}


def diffusion_coeff(t):
    """Diffusion coefficient ``1 / (3 (mu_a + mu_s'))``.

    Parameters
    ----------
    t : Tissue or (mu_a, mu_s_prime) pair

    Raises
    ------
    DomainError
        If ``mu_a + mu_s'`` is not positive.
    """
    mu_a, mu_s = (t.mu_a, t.mu_s_prime) if isinstance(t, Tissue) else t
    total = mu_a + mu_s
    if not total > 0:
        raise DomainError(f"mu_a + mu_s' must be positive, got {total}")
    return 1.0 / (3.0 * total)


def get_tissue(spec):
    """Resolve a preset name or a ``{"mu_a", "mu_s_prime"}`` mapping."""
    if isinstance(spec, Tissue):
        return spec
    if isinstance(spec, str):
        try:
            return PRESETS[spec]
        except KeyError:
            raise ValidationError(f"unknown tissue preset {spec!r}; known: {sorted(PRESETS)}") from None
    return Tissue(float(spec["mu_a"]), float(spec["mu_s_prime"]), spec.get("name", ""))


@dataclass(frozen=True)
class RadialRegion:
    """Points with ``|x| < radius``."""

    radius: float

    def __call__(self, pts):
        return np.linalg.norm(np.atleast_2d(pts), axis=1) < self.radius


@dataclass(frozen=True)
class TagRegion:
    """Elements carrying a given mesh region tag."""

    tag: int


Region = Union[RadialRegion, TagRegion, Callable]


@dataclass(frozen=True)
class MediaMap:
    """Piecewise-constant media: the first matching region wins, else background.

    Parameters
    ----------
    background : Tissue
    regions : sequence of (region, Tissue)
        ``region`` is a :class:`RadialRegion`, a :class:`TagRegion` or a
        vectorized predicate ``pts -> bool array``.
    radius : float, optional
        Domain radius; points outside are rejected by :func:`eval_media`.
    """

    background: Tissue
    regions: Sequence = field(default_factory=tuple)
    radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple((r, get_tissue(t)) for r, t in self.regions))
        object.__setattr__(self, "background", get_tissue(self.background))

    @classmethod
    def uniform(cls, tissue, radius=None):
        return cls(get_tissue(tissue), (), radius)

    def interfaces(self):
        """Radii of radial interfaces, for meshing."""
        return tuple(sorted({float(r.radius) for r, _ in self.regions if isinstance(r, RadialRegion)}))

    def tissue_index(self, pts, tags=None):
        """Index into ``[background, *region tissues]`` for each point."""
        pts = np.atleast_2d(np.asarray(pts, float))
        idx = np.zeros(len(pts), np.int64)
        done = np.zeros(len(pts), bool)
        for k, (reg, _) in enumerate(self.regions, start=1):
            if isinstance(reg, TagRegion):
                if tags is None:
                    raise DomainError("tag regions need mesh region tags to resolve")
                hit = np.asarray(tags) == reg.tag
            else:
                hit = np.asarray(reg(pts), bool)
            new = hit & ~done
            idx[new] = k
            done |= new
        return idx

    def tissues(self):
        return [self.background] + [t for _, t in self.regions]

    def to_dict(self):
        regs = []
        for reg, t in self.regions:
            if isinstance(reg, RadialRegion):
                regs.append({"radius": reg.radius, "tissue": _tissue_ref(t)})
            elif isinstance(reg, TagRegion):
                regs.append({"tag": reg.tag, "tissue": _tissue_ref(t)})
            else:
                raise ValidationError("predicate regions are not serializable")
        return {"background": _tissue_ref(self.background), "regions": regs}

    @classmethod
    def from_dict(cls, d, radius=None):
        regs = []
        for r in d.get("regions", []):
            reg = RadialRegion(float(r["radius"])) if "radius" in r else TagRegion(int(r["tag"]))
            regs.append((reg, get_tissue(r["tissue"])))
        return cls(get_tissue(d["background"]), regs, radius)


def _tissue_ref(t):
    if t.name in PRESETS and PRESETS[t.name] == t:
        return t.name
    return t.to_dict()


def eval_media(m, p):
    """Return ``(D, mu)`` at a single point ``p``.

    Raises
    ------
    DomainError
        If ``p`` lies outside the domain radius of ``m``.
    """
    p = np.asarray(p, float)
    if not np.all(np.isfinite(p)):
        raise DomainError(f"point {p} is not finite")
    if m.radius is not None and np.linalg.norm(p) > m.radius * (1 + 1e-9):
        raise DomainError(f"point {p} lies outside B_{m.radius}")
    t = m.tissues()[int(m.tissue_index(p[None, :])[0])]
    return t.D, t.mu


def element_coefficients(m, mesh):
    """Per-element ``(D, mu)`` arrays resolved at element centroids."""
    idx = m.tissue_index(mesh.centroids(), mesh.region)
    D = np.array([t.D for t in m.tissues()])[idx]
    mu = np.array([t.mu for t in m.tissues()])[idx]
    return D, mu
