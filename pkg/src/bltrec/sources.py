"""
Parametrized piecewise-constant sources ``q = sum_j phi_j chi_{omega_j}``.

Shapes are immutable value types exposing a distance-like level set
(negative inside).  Every level set here is a lower bound on the true
distance to the shape boundary, which the load integration relies on to
skip elements that cannot be cut.

Two representations of a layered field are supported:

``nested``
    ``q = sum_j phi_j chi_{omega_j}`` with ``omega_{j+1}`` compactly inside
    ``omega_j``.
``disjoint``
    pairwise disjoint layers, ``q = v_j`` on layer ``j``.

Parameter layouts (``theta``), per family:

=============  =========================================================
``disk``       ``[cx, cy, r, phi]``
``ball``       ``[cx, cy, cz, r, phi]``
``ellipsoid``  ``[c (d), semiaxes (d), phi]``
``polygon``    ``[x1, y1, ..., xk, yk, phi]`` (counterclockwise)
``box``        ``[min corner (d), side lengths (d), phi]``
``corona``     ``[apex_1 (d), ..., apex_k (d), phi]`` (base held fixed)
``nested``     ``[c_1, r_1, ..., c_m, r_m, w_1, ..., w_m]`` with ``w`` the
               layer values (disjoint) or increments (nested)
=============  =========================================================
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import RepresentationError, ValidationError

DIST_MIN = 0.1
_ON_TOL = 1e-12


def _tup(x):
    return tuple(float(v) for v in np.ravel(x))


def _pts(p, dim):
    p = np.asarray(p, float)
    if p.ndim == 1:
        p = p[None, :]
    if p.shape[1] != dim:
        raise ValidationError(f"points of dimension {p.shape[1]} given to a {dim}D shape")
    return p


def _sphere_samples(n, dim):
    if dim == 2:
        t = 2 * math.pi * np.arange(n) / n
        return np.column_stack([np.cos(t), np.sin(t)])
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    rho = np.sqrt(np.clip(1 - z * z, 0, None))
    ph = np.arange(n) * math.pi * (3 - math.sqrt(5))
    return np.column_stack([rho * np.cos(ph), rho * np.sin(ph), z])


class Shape:
    """Common interface of all shapes."""

    kind = "shape"

    def _check(self):
        bad = self.violations()
        if bad:
            raise ValidationError(f"invalid {self.kind}: " + "; ".join(bad), bad)

    def violations(self):
        return []

    def contains(self, pts):
        """Closed-set membership."""
        return self.level_set(pts) <= _ON_TOL

    def boundary_samples(self, n=512):
        raise NotImplementedError

    def max_norm(self):
        """Largest ``|x|`` over the closed shape."""
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(Shape):
    """Disk (2D) or ball (3D)."""

    center: tuple
    radius: float
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", _tup(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        self._check()

    @property
    def dim(self):
        return len(self.center)

    def violations(self):
        bad = []
        if self.dim not in (2, 3):
            bad.append(f"center must have 2 or 3 coordinates, got {self.dim}")
        if not (np.isfinite(self.radius) and self.radius > 0):
            bad.append(f"radius must be > 0, got {self.radius}")
        if not np.all(np.isfinite(self.center)):
            bad.append("center must be finite")
        return bad

    def level_set(self, pts):
        return np.linalg.norm(_pts(pts, self.dim) - self.center, axis=1) - self.radius

    def boundary_samples(self, n=512):
        return np.asarray(self.center) + self.radius * _sphere_samples(n, self.dim)

    def max_norm(self):
        return float(np.linalg.norm(self.center)) + self.radius

    def to_dict(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


Disk = Ball


@dataclass(frozen=True)
class Ellipsoid(Shape):
    """Axis-aligned ellipse/ellipsoid."""

    center: tuple
    semiaxes: tuple
    kind = "ellipsoid"

    def __post_init__(self):
        object.__setattr__(self, "center", _tup(self.center))
        object.__setattr__(self, "semiaxes", _tup(self.semiaxes))
        self._check()

    @property
    def dim(self):
        return len(self.center)

    def violations(self):
        bad = []
        if self.dim not in (2, 3) or len(self.semiaxes) != self.dim:
            bad.append("center and semiaxes must both have 2 or 3 entries")
        if not all(np.isfinite(a) and a > 0 for a in self.semiaxes):
            bad.append(f"semiaxes must be > 0, got {self.semiaxes}")
        return bad

    def level_set(self, pts):
        a = np.asarray(self.semiaxes)
        s = np.linalg.norm((_pts(pts, self.dim) - self.center) / a, axis=1)
        # scaling by min(a) keeps this a lower bound on the distance
        return a.min() * (s - 1.0)

    def boundary_samples(self, n=512):
        return np.asarray(self.center) + np.asarray(self.semiaxes) * _sphere_samples(n, self.dim)

    def max_norm(self):
        return float(np.linalg.norm(self.boundary_samples(4096), axis=1).max())

    def to_dict(self):
        return {"type": "ellipsoid", "center": list(self.center), "semiaxes": list(self.semiaxes)}


@dataclass(frozen=True)
class ConvexPolygon(Shape):
    """Strictly convex polygon with counterclockwise vertices."""

    vertices: tuple
    kind = "polygon"
    dim = 2

    def __post_init__(self):
        v = np.asarray(self.vertices, float).reshape(-1, 2)
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))
        self._check()

    def _edges(self):
        v = np.asarray(self.vertices)
        return v, np.roll(v, -1, axis=0) - v

    def violations(self):
        v = np.asarray(self.vertices)
        if len(v) < 3:
            return [f"a polygon needs at least 3 vertices, got {len(v)}"]
        if not np.all(np.isfinite(v)):
            return ["vertices must be finite"]
        _, e = self._edges()
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        bad = []
        if np.any(np.linalg.norm(e, axis=1) <= 0):
            bad.append("repeated vertex")
        elif not np.all(cross > 0):
            bad.append("vertices are not in strictly convex counterclockwise position")
        else:
            # a star polygon can turn left everywhere and still wind twice
            turn = np.arctan2(cross, np.einsum("ij,ij->i", e, np.roll(e, -1, axis=0)))
            if abs(turn.sum() - 2 * math.pi) > 1e-9:
                bad.append("polygon winds more than once")
        return bad

    def level_set(self, pts):
        p = _pts(pts, 2)
        v, e = self._edges()
        n = np.column_stack([e[:, 1], -e[:, 0]]) / np.linalg.norm(e, axis=1)[:, None]
        return np.max(np.einsum("pkj,kj->pk", p[:, None, :] - v[None], n), axis=1)

    def boundary_samples(self, n=512):
        v, e = self._edges()
        k = max(2, n // len(v))
        t = np.arange(k) / k
        return (v[:, None, :] + t[None, :, None] * e[:, None, :]).reshape(-1, 2)

    def max_norm(self):
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def area(self):
        v = np.asarray(self.vertices)
        return 0.5 * float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))

    def to_dict(self):
        return {"type": "polygon", "vertices": [list(x) for x in self.vertices]}


@dataclass(frozen=True)
class Box(Shape):
    """Axis-aligned rectangle/box given by its min corner and side lengths."""

    min_corner: tuple
    sides: tuple
    kind = "box"

    def __post_init__(self):
        object.__setattr__(self, "min_corner", _tup(self.min_corner))
        object.__setattr__(self, "sides", _tup(self.sides))
        self._check()

    @property
    def dim(self):
        return len(self.min_corner)

    @property
    def center(self):
        return tuple(np.asarray(self.min_corner) + 0.5 * np.asarray(self.sides))

    @classmethod
    def centered(cls, center, sides):
        c = np.asarray(center, float)
        s = np.broadcast_to(np.asarray(sides, float), c.shape)
        return cls(c - 0.5 * s, s)

    def violations(self):
        bad = []
        if self.dim not in (2, 3) or len(self.sides) != self.dim:
            bad.append("min_corner and sides must both have 2 or 3 entries")
        if not all(np.isfinite(s) and s > 0 for s in self.sides):
            bad.append(f"side lengths must be > 0, got {self.sides}")
        return bad

    def level_set(self, pts):
        p = _pts(pts, self.dim)
        s = np.asarray(self.sides)
        return np.max(np.abs(p - self.center) - 0.5 * s, axis=1)

    def boundary_samples(self, n=512):
        d = self.dim
        u = _sphere_samples(n, d)
        u = u / np.max(np.abs(u), axis=1, keepdims=True)
        return np.asarray(self.center) + 0.5 * np.asarray(self.sides) * u

    def max_norm(self):
        lo = np.asarray(self.min_corner)
        hi = lo + self.sides
        return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))

    def to_dict(self):
        return {"type": "box", "min_corner": list(self.min_corner), "sides": list(self.sides)}


@dataclass(frozen=True)
class Difference(Shape):
    """``outer`` minus the open interior of ``inner`` (closed result)."""

    outer: Shape
    inner: Shape
    kind = "difference"

    def __post_init__(self):
        self._check()

    @property
    def dim(self):
        return self.outer.dim

    def violations(self):
        if self.outer.dim != self.inner.dim:
            return ["outer and inner shapes differ in dimension"]
        return []

    def level_set(self, pts):
        return np.maximum(self.outer.level_set(pts), -self.inner.level_set(pts))

    def boundary_samples(self, n=512):
        a = self.outer.boundary_samples(n)
        b = self.inner.boundary_samples(n)
        return np.vstack([a[self.inner.level_set(a) >= 0], b[self.outer.level_set(b) <= 0]])

    def max_norm(self):
        return self.outer.max_norm()

    def to_dict(self):
        return {"type": "difference", "outer": self.outer.to_dict(), "inner": self.inner.to_dict()}


@dataclass(frozen=True)
class Annulus(Difference):
    """``B_{r_out}(center)`` minus ``B_{r_in}(inner_center)``.

    ``inner_center`` defaults to ``center``; an off-centre hole is allowed
    as long as it stays compactly inside the outer ball.
    """

    outer: Shape = None
    inner: Shape = None
    kind = "annulus"

    @classmethod
    def make(cls, center, r_in, r_out, inner_center=None):
        outer = Ball(center, r_out)
        inner = Ball(center if inner_center is None else inner_center, r_in)
        return cls(outer, inner)

    def violations(self):
        bad = []
        if not (isinstance(self.outer, Ball) and isinstance(self.inner, Ball)):
            return ["annulus boundaries must be balls"]
        if self.outer.dim != self.inner.dim:
            return ["outer and inner balls differ in dimension"]
        if not self.inner.radius < self.outer.radius:
            bad.append(f"inner radius {self.inner.radius} must be < outer radius {self.outer.radius}")
        off = np.linalg.norm(np.subtract(self.inner.center, self.outer.center))
        if not off + self.inner.radius < self.outer.radius:
            bad.append("inner ball is not compactly inside the outer ball")
        return bad

    def to_dict(self):
        return {"type": "annulus", "center": list(self.outer.center),
                "inner_center": list(self.inner.center),
                "r_in": self.inner.radius, "r_out": self.outer.radius}


def _tangent_cone_level_set(p, apex, center, radius):
    """Cone from ``apex`` tangent to ``B_radius(center)``, cut at the tangency plane."""
    v = p - apex
    axis = np.asarray(center) - apex
    d = np.linalg.norm(axis)
    u = axis / d
    sin_a = radius / d
    cos_a = math.sqrt(1 - sin_a * sin_a)
    t = v @ u
    r = np.linalg.norm(v - t[:, None] * u, axis=1)
    side = np.where(t * cos_a + r * sin_a >= 0, r * cos_a - t * sin_a, np.linalg.norm(v, axis=1))
    cap = t - d * cos_a * cos_a
    return np.maximum(side, cap)


@dataclass(frozen=True)
class Corona(Shape):
    """Base ball with protruding cones, optionally minus a sector (2D).

    Each protrusion is the triangle (2D) or cone (3D) from an apex to the
    tangency points on the base ball.  ``carve_angle`` removes the closed
    sector of angular width ``carve_width`` centred at that angle.
    """

    apexes: tuple
    base_center: tuple = (0.0, 0.0)
    base_radius: float = 1.0
    carve_angle: Optional[float] = None
    carve_width: float = math.pi / 2
    kind = "corona"

    def __post_init__(self):
        a = np.asarray(self.apexes, float)
        a = a.reshape(-1, len(self.base_center))
        object.__setattr__(self, "apexes", tuple(map(tuple, a.tolist())))
        object.__setattr__(self, "base_center", _tup(self.base_center))
        object.__setattr__(self, "base_radius", float(self.base_radius))
        if self.carve_angle is not None:
            object.__setattr__(self, "carve_angle", float(self.carve_angle))
        self._check()

    @property
    def dim(self):
        return len(self.base_center)

    def violations(self):
        bad = []
        if not self.base_radius > 0:
            bad.append(f"base radius must be > 0, got {self.base_radius}")
        if not self.apexes:
            bad.append("a corona needs at least one apex")
        if self.carve_angle is not None and (self.dim != 2 or not 0 < self.carve_width < math.pi):
            bad.append("sector carving needs 2D and a width in (0, pi)")
        for k, a in enumerate(self.apexes):
            if not np.all(np.isfinite(a)):
                bad.append(f"apex {k} is not finite")
            elif not np.linalg.norm(np.subtract(a, self.base_center)) > self.base_radius * (1 + 1e-9):
                bad.append(f"apex {k} at {a} is not strictly outside the base")
        return bad

    def _base_level_set(self, p):
        q = p - self.base_center
        ls = np.linalg.norm(q, axis=1) - self.base_radius
        if self.carve_angle is not None:
            a1 = self.carve_angle + 0.5 * self.carve_width
            a0 = self.carve_angle - 0.5 * self.carve_width
            h1 = -q[:, 0] * math.sin(a1) + q[:, 1] * math.cos(a1)
            h0 = q[:, 0] * math.sin(a0) - q[:, 1] * math.cos(a0)
            ls = np.maximum(ls, -np.maximum(h0, h1))
        return ls

    def level_set(self, pts):
        p = _pts(pts, self.dim)
        ls = self._base_level_set(p)
        for a in self.apexes:
            ls = np.minimum(ls, _tangent_cone_level_set(p, np.asarray(a), self.base_center,
                                                        self.base_radius))
        return ls

    def boundary_samples(self, n=512):
        c = np.asarray(self.base_center)
        cand = [c + self.base_radius * _sphere_samples(n, self.dim)]
        for a in self.apexes:
            a = np.asarray(a)
            d = np.linalg.norm(c - a)
            # points on the cone surface between apex and tangency circle
            L = math.sqrt(d * d - self.base_radius ** 2)
            dirs = _sphere_samples(max(8, n // 8), self.dim)
            u = (c - a) / d
            sin_a, cos_a = self.base_radius / d, L / d
            perp = dirs - (dirs @ u)[:, None] * u
            nrm = np.linalg.norm(perp, axis=1)
            perp = perp[nrm > 1e-6] / nrm[nrm > 1e-6, None]
            gen = cos_a * u + sin_a * perp
            t = np.linspace(0, L, 16)
            cand.append((a + t[:, None, None] * gen[None]).reshape(-1, self.dim))
        if self.carve_angle is not None:
            t = np.linspace(0, self.base_radius, 32)
            for ang in (self.carve_angle - 0.5 * self.carve_width, self.carve_angle + 0.5 * self.carve_width):
                cand.append(c + t[:, None] * [math.cos(ang), math.sin(ang)])
        cand = np.vstack(cand)
        return cand[np.abs(self.level_set(cand)) <= 1e-9 * max(1.0, self.max_norm())]

    def max_norm(self):
        m = float(np.linalg.norm(self.base_center)) + self.base_radius
        return max([m] + [float(np.linalg.norm(a)) for a in self.apexes])

    def with_apexes(self, apexes):
        return dataclasses.replace(self, apexes=apexes)

    def to_dict(self):
        d = {"type": "corona", "apexes": [list(a) for a in self.apexes],
             "base_center": list(self.base_center), "base_radius": self.base_radius}
        if self.carve_angle is not None:
            d["carve_angle"] = self.carve_angle
            d["carve_width"] = self.carve_width
        return d


def shape_from_dict(d):
    t = d.get("type")
    try:
        if t in ("ball", "disk"):
            return Ball(d["center"], d["radius"])
        if t == "ellipsoid":
            return Ellipsoid(d["center"], d["semiaxes"])
        if t == "polygon":
            return ConvexPolygon(d["vertices"])
        if t == "box":
            if "center" in d:
                return Box.centered(d["center"], d["sides"])
            return Box(d["min_corner"], d["sides"])
        if t == "annulus":
            return Annulus.make(d["center"], d["r_in"], d["r_out"], d.get("inner_center"))
        if t == "difference":
            return Difference(shape_from_dict(d["outer"]), shape_from_dict(d["inner"]))
        if t == "corona":
            return Corona(d["apexes"], d.get("base_center", (0.0, 0.0)), d.get("base_radius", 1.0),
                          d.get("carve_angle"), d.get("carve_width", math.pi / 2))
    except KeyError as e:
        raise ValidationError(f"shape of type {t!r} is missing field {e}") from None
    raise ValidationError(f"unknown shape type {t!r}")


# --------------------------------------------------------------------------
# source fields

REPRESENTATIONS = ("nested", "disjoint")


@dataclass(frozen=True)
class Family:
    """Packing layout of a parameter vector.

    ``count`` is the number of polygon vertices, corona apexes or nested
    layers.  ``base`` holds the fixed part of a corona.
    """

    name: str
    dim: int
    count: int = 1
    representation: str = "nested"
    base: Optional[Corona] = None

    @property
    def size(self):
        d, k = self.dim, self.count
        return {
            "disk": d + 2, "ball": d + 2, "ellipsoid": 2 * d + 1, "polygon": 2 * k + 1,
            "box": 2 * d + 1, "corona": d * k + 1, "nested": k * (d + 2),
        }[self.name]

    def labels(self):
        ax = "xyz"[: self.dim]
        k = self.count
        if self.name in ("disk", "ball"):
            return [f"c{a}" for a in ax] + ["r", "phi"]
        if self.name == "ellipsoid":
            return [f"c{a}" for a in ax] + [f"a{a}" for a in ax] + ["phi"]
        if self.name == "polygon":
            return [f"v{j}{a}" for j in range(k) for a in ax] + ["phi"]
        if self.name == "box":
            return [f"min{a}" for a in ax] + [f"side{a}" for a in ax] + ["phi"]
        if self.name == "corona":
            return [f"apex{j}{a}" for j in range(k) for a in ax] + ["phi"]
        w = "v" if self.representation == "disjoint" else "phi"
        return ([f"{n}{j}" for j in range(k) for n in [f"c{a}" for a in ax] + ["r"]]
                + [f"{w}{j}" for j in range(k)])

    def intensity_mask(self):
        """True for intensity entries, False for geometry."""
        if self.name == "nested":
            d = self.dim
            return np.arange(self.size) >= self.count * (d + 1)
        return np.arange(self.size) == self.size - 1

    def to_dict(self):
        d = {"name": self.name, "dim": self.dim, "count": self.count,
             "representation": self.representation}
        if self.base is not None:
            d["base"] = self.base.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        base = shape_from_dict(d["base"]) if "base" in d else None
        return cls(d["name"], int(d["dim"]), int(d.get("count", 1)),
                   d.get("representation", "nested"), base)


@dataclass(frozen=True)
class ParamVector:
    theta: np.ndarray
    family: Family

    def __post_init__(self):
        th = np.array(self.theta, float, copy=True).ravel()
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)
        if th.size != self.family.size:
            raise ValidationError(
                f"{self.family.name} layout needs {self.family.size} entries, got {th.size}")


@dataclass(frozen=True)
class SourceField:
    """Layered piecewise-constant source.

    Parameters
    ----------
    layers : sequence of (Shape, float)
    representation : {"nested", "disjoint"}
    family : Family, optional
        Packing layout; inferred by :func:`infer_family` when omitted.
    """

    layers: tuple
    representation: str = "nested"
    family: Optional[Family] = None

    def __post_init__(self):
        layers = tuple((s, float(v)) for s, v in self.layers)
        object.__setattr__(self, "layers", layers)
        if self.representation not in REPRESENTATIONS:
            raise ValidationError(f"representation must be one of {REPRESENTATIONS}")
        if not layers:
            raise ValidationError("a source field needs at least one layer")
        dims = {s.dim for s, _ in layers}
        if len(dims) != 1:
            raise ValidationError("all layers must share one dimension")

    @property
    def dim(self):
        return self.layers[0][0].dim

    @property
    def shapes(self):
        return [s for s, _ in self.layers]

    @property
    def values(self):
        return np.array([v for _, v in self.layers])

    def scaled(self, alpha):
        return dataclasses.replace(self, layers=[(s, alpha * v) for s, v in self.layers])

    def to_dict(self):
        d = {"representation": self.representation,
             "layers": [{"shape": s.to_dict(), "phi": v} for s, v in self.layers]}
        if self.family is not None:
            d["family"] = self.family.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        fam = Family.from_dict(d["family"]) if "family" in d else None
        layers = [(shape_from_dict(l["shape"]), l["phi"]) for l in d["layers"]]
        return cls(layers, d.get("representation", "nested"), fam)

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def single(shape, phi, family=None):
    """One-layer field."""
    return SourceField([(shape, phi)], "nested", family)


def indicator(s, p):
    """Closed-set indicator of ``s`` at ``p`` (a point or an array of points)."""
    out = s.contains(p).astype(np.int64)
    return int(out[0]) if np.ndim(p) == 1 else out


def eval_source(q, p):
    """Pointwise source value, for one point or an (n, d) array."""
    pts = _pts(p, q.dim)
    if q.representation == "nested":
        out = np.zeros(len(pts))
        for s, v in q.layers:
            out += v * s.contains(pts)
    else:
        out = np.zeros(len(pts))
        done = np.zeros(len(pts), bool)
        for s, v in q.layers:
            hit = s.contains(pts) & ~done
            out[hit] = v
            done |= hit
    return float(out[0]) if np.ndim(p) == 1 else out


def smoothstep(s, eps):
    """C^1 ramp from 0 (``s <= -eps``) to 1 (``s >= eps``) with ``H(s) + H(-s) = 1``."""
    t = np.clip((s + eps) / (2 * eps), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def eval_source_smooth(q, pts, eps):
    """Source with each layer indicator replaced by ``H_eps(-level_set)``.

    ``eps`` may be a scalar or one value per point.
    """
    pts = _pts(pts, q.dim)
    out = np.zeros(len(pts))
    for s, v in q.layers:
        out += v * smoothstep(-s.level_set(pts), eps)
    return out


def _covers(outer, inner, margin, n=512):
    x = inner.boundary_samples(n)
    return bool(np.all(outer.level_set(x) < -margin))


def _outer_inner(s):
    if isinstance(s, Difference):
        return s.outer, s.inner
    return None


def to_disjoint_layers(q):
    """Convert a nested-sum field to disjoint layers (prefix sums of ``phi``)."""
    if q.representation == "disjoint":
        return q
    shapes = q.shapes
    for j in range(len(shapes) - 1):
        if not _covers(shapes[j], shapes[j + 1], 0.0):
            raise RepresentationError(f"layer {j + 1} is not nested inside layer {j}")
    vals = np.cumsum(q.values)
    layers = []
    for j, s in enumerate(shapes):
        if j + 1 < len(shapes):
            nxt = shapes[j + 1]
            if isinstance(s, Ball) and isinstance(nxt, Ball):
                s = Annulus(s, nxt)
            else:
                s = Difference(s, nxt)
        layers.append((s, vals[j]))
    fam = q.family and dataclasses.replace(q.family, representation="disjoint")
    return SourceField(layers, "disjoint", fam)


def to_nested_sum(q):
    """Convert disjoint layers ``omega_j \\ omega_{j+1}`` to a nested sum."""
    if q.representation == "nested":
        return q
    shapes = q.shapes
    nested = [None] * len(shapes)
    nested[-1] = shapes[-1]
    for j in range(len(shapes) - 2, -1, -1):
        oi = _outer_inner(shapes[j])
        if oi is None or oi[1] != nested[j + 1]:
            raise RepresentationError(
                f"layer {j} is not the difference of a support and the next layer's support")
        nested[j] = oi[0]
    v = q.values
    phi = np.diff(np.concatenate([[0.0], v]))
    fam = q.family and dataclasses.replace(q.family, representation="nested")
    return SourceField(list(zip(nested, phi)), "nested", fam)


# --------------------------------------------------------------------------
# packing

def infer_family(q):
    """Packing layout implied by the layer shapes of ``q``."""
    if q.family is not None:
        return q.family
    shapes = q.shapes
    d = q.dim
    if len(shapes) == 1:
        s = shapes[0]
        if isinstance(s, Ball):
            return Family("disk" if d == 2 else "ball", d)
        if isinstance(s, Ellipsoid):
            return Family("ellipsoid", d)
        if isinstance(s, ConvexPolygon):
            return Family("polygon", 2, len(s.vertices))
        if isinstance(s, Box):
            return Family("box", d)
        if isinstance(s, Corona):
            return Family("corona", d, len(s.apexes), base=s.with_apexes(s.apexes))
    balls = _nested_balls(q)
    if balls is not None:
        return Family("nested", d, len(balls), q.representation)
    raise ValidationError("no parameter layout covers this source field")


def _nested_balls(q):
    shapes = q.shapes
    if q.representation == "nested":
        return shapes if all(isinstance(s, Ball) for s in shapes) else None
    out = []
    for j, s in enumerate(shapes):
        if j + 1 < len(shapes):
            if not isinstance(s, Annulus):
                return None
            out.append(s.outer)
        elif isinstance(s, Ball):
            out.append(s)
        else:
            return None
    return out


def pack_params(q):
    fam = infer_family(q)
    s = q.shapes[0]
    phi = q.values
    n = fam.name
    if n in ("disk", "ball"):
        th = [*s.center, s.radius, phi[0]]
    elif n == "ellipsoid":
        th = [*s.center, *s.semiaxes, phi[0]]
    elif n == "polygon":
        th = [*np.ravel(s.vertices), phi[0]]
    elif n == "box":
        th = [*s.min_corner, *s.sides, phi[0]]
    elif n == "corona":
        th = [*np.ravel(s.apexes), phi[0]]
    else:
        balls = _nested_balls(q)
        th = [x for b in balls for x in (*b.center, b.radius)] + list(phi)
    return ParamVector(np.array(th, float), fam)


def unpack_params(v, family=None):
    """Build the source field described by a parameter vector.

    Raises
    ------
    ValidationError
        When a shape invariant is violated; ``.violations`` names it.
    """
    if not isinstance(v, ParamVector):
        v = ParamVector(v, family)
    fam, th = v.family, v.theta
    d, n = fam.dim, fam.name
    if n in ("disk", "ball"):
        return single(Ball(th[:d], th[d]), th[d + 1], fam)
    if n == "ellipsoid":
        return single(Ellipsoid(th[:d], th[d:2 * d]), th[2 * d], fam)
    if n == "polygon":
        return single(ConvexPolygon(th[:-1].reshape(-1, 2)), th[-1], fam)
    if n == "box":
        return single(Box(th[:d], th[d:2 * d]), th[2 * d], fam)
    if n == "corona":
        return single(fam.base.with_apexes(th[:-1].reshape(-1, d)), th[-1], fam)
    if n == "nested":
        m = fam.count
        balls = [Ball(th[j * (d + 1):j * (d + 1) + d], th[j * (d + 1) + d]) for j in range(m)]
        w = th[m * (d + 1):]
        if fam.representation == "nested":
            return SourceField(list(zip(balls, w)), "nested", fam)
        layers = []
        for j in range(m):
            if j + 1 < m:
                layers.append((Annulus(balls[j], balls[j + 1]), w[j]))
            else:
                layers.append((balls[j], w[j]))
        return SourceField(layers, "disjoint", fam)
    raise ValidationError(f"unknown family {n!r}")


# --------------------------------------------------------------------------
# admissibility

@dataclass(frozen=True)
class Domain:
    radius: float
    dim: int


def validate(q, omega, dist_min=DIST_MIN, nest_margin=1e-6):
    """Collect every admissibility violation of ``q`` inside ``omega``.

    Returns an empty list for an admissible field.
    """
    bad = []
    for j, s in enumerate(q.shapes):
        if s.dim != omega.dim:
            bad.append(f"layer {j}: dimension {s.dim} does not match domain dimension {omega.dim}")
            continue
        bad.extend(f"layer {j}: {m}" for m in s.violations())
        ext = s.max_norm()
        if ext + dist_min > omega.radius:
            bad.append(f"layer {j}: containment violated, extends to |x| = {ext:.6g} "
                       f"(limit {omega.radius - dist_min:.6g})")
    if bad:
        return bad
    shapes, vals = q.shapes, q.values
    if q.representation == "nested":
        # a lone zero layer is the zero source, which the forward map accepts
        if vals[0] == 0 and len(shapes) > 1:
            bad.append("nesting: phi_1 must be nonzero")
        for j in range(len(shapes) - 1):
            if not _covers(shapes[j], shapes[j + 1], nest_margin):
                bad.append(f"nesting: layer {j + 1} is not compactly inside layer {j}")
            if vals[j + 1] == vals[j]:
                bad.append(f"nesting: phi_{j + 1} and phi_{j + 2} must differ")
    else:
        for i in range(len(shapes)):
            for j in range(i + 1, len(shapes)):
                a, b = shapes[i], shapes[j]
                tol = 1e-9 * omega.radius
                if (np.any(b.level_set(a.boundary_samples()) < -tol)
                        or np.any(a.level_set(b.boundary_samples()) < -tol)):
                    bad.append(f"disjointness: layers {i} and {j} overlap")
    return bad


def is_admissible(theta, family, omega, dist_min=DIST_MIN):
    try:
        q = unpack_params(ParamVector(theta, family))
    except ValidationError:
        return False
    return not validate(q, omega, dist_min)
