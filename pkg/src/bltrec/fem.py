"""
P1 finite elements for ``-div(D grad u) + mu u = q`` with the Robin
condition ``u + 2 D du/dn = g_minus`` on ``|x| = R``.

Weak form::

    int D grad u . grad v + mu u v  +  1/2 oint u v  =  int q v  +  1/2 oint g_minus v

The system matrix depends on mesh and media only, so :class:`ForwardContext`
factorizes it once and reuses it for every source.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from . import mesh as meshmod
from .errors import AssemblyError, SolverError, ValidationError
from .media import element_coefficients
from .sources import eval_source, smoothstep

DIRECT_MAX_NODES = 200_000
# 3D LU fill-in grows much faster; beyond this CG is cheaper and fits in memory
DIRECT_MAX_NODES_3D = 50_000


def direct_limit(dim):
    return DIRECT_MAX_NODES if dim == 2 else DIRECT_MAX_NODES_3D
CG_RTOL = 1e-10
SUBDIVISION_DEPTH = 3
# ramp half-width relative to the element diameter; 0 is the sharp indicator
DEFAULT_SMOOTHING = 0.0
# used by inversion so that finite-difference Jacobians see a C^1 load
INVERSION_SMOOTHING = 0.25
_CHUNK = 1 << 19


# --------------------------------------------------------------------------
# boundary datum

@dataclass(frozen=True)
class BoundaryDatum:
    """Incoming flux ``g_minus``: zero, a coordinate function or a constant."""

    kind: str = "zero"
    axis: int = 0
    value: float = 0.0

    def __call__(self, pts):
        pts = np.atleast_2d(pts)
        if self.kind == "zero":
            return np.zeros(len(pts))
        if self.kind == "coordinate":
            return pts[:, self.axis].astype(float)
        if self.kind == "constant":
            return np.full(len(pts), float(self.value))
        raise ValidationError(f"unknown boundary datum kind {self.kind!r}")

    @property
    def is_zero(self):
        return self.kind == "zero" or (self.kind == "constant" and self.value == 0)

    def to_dict(self):
        if self.kind == "coordinate":
            return {"kind": "coordinate", "axis": self.axis}
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        return {"kind": "zero"}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        if isinstance(d, str):
            d = {"kind": d}
        return cls(d.get("kind", "zero"), int(d.get("axis", 0)), float(d.get("value", 0.0)))


ZERO = BoundaryDatum()


def _datum(g):
    if g is None:
        return ZERO
    if isinstance(g, BoundaryDatum):
        return g
    return BoundaryDatum.from_dict(g)


# --------------------------------------------------------------------------
# element geometry

def _gradients(mesh):
    """Barycentric gradients, shape (E, d+1, d), and element volumes."""
    x = mesh.nodes[mesh.elements]
    J = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))
    det = np.linalg.det(J)
    vol = det / math.factorial(mesh.dim)
    bad = np.flatnonzero(~(vol > 1e-14 * mesh.radius ** mesh.dim))
    if bad.size:
        raise AssemblyError(f"degenerate element {bad[0]} (volume {vol[bad[0]]:.3e})")
    Jinv = np.linalg.inv(J)
    G = np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)
    return G, vol


def _facet_measure(mesh):
    x = mesh.nodes[mesh.boundary_facets]
    if mesh.dim == 2:
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)
    return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)


def _scatter(conn, blocks, n):
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    return sparse.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def stiffness_matrix(mesh, D):
    G, vol = _gradients(mesh)
    Ke = (D * vol)[:, None, None] * np.einsum("eik,ejk->eij", G, G)
    return _scatter(mesh.elements, Ke, mesh.n_nodes)


def mass_matrix(mesh, mu):
    _, vol = _gradients(mesh)
    k = mesh.dim + 1
    ref = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return _scatter(mesh.elements, (mu * vol)[:, None, None] * ref, mesh.n_nodes)


def boundary_mass_matrix(mesh):
    k = mesh.dim
    ref = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    return _scatter(mesh.boundary_facets, _facet_measure(mesh)[:, None, None] * ref, mesh.n_nodes)


@dataclass(eq=False)
class AssembledSystem:
    """``A = K(D) + M(mu) + 1/2 M_boundary`` with a cached solver."""

    A: sparse.csr_matrix
    mesh: meshmod.Mesh
    media: object
    boundary_mass: sparse.csr_matrix
    direct_max_nodes: Optional[int] = None
    _lu: object = field(default=None, repr=False)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def direct(self):
        limit = direct_limit(self.mesh.dim) if self.direct_max_nodes is None else self.direct_max_nodes
        return self.n <= limit

    def factorize(self):
        if self._lu is None and self.direct:
            self._lu = spla.splu(self.A.tocsc())
        return self._lu


def assemble(mesh, media, direct_max_nodes=None):
    """Assemble the Robin system matrix.

    Raises
    ------
    AssemblyError
        On a degenerate element.
    """
    D, mu = element_coefficients(media, mesh)
    Mb = boundary_mass_matrix(mesh)
    A = stiffness_matrix(mesh, D) + mass_matrix(mesh, mu) + 0.5 * Mb
    return AssembledSystem(A.tocsr(), mesh, media, Mb, direct_max_nodes)


# --------------------------------------------------------------------------
# load

@lru_cache(maxsize=None)
def _subdivision(dim, depth):
    """Barycentric centroids of the ``2**(dim*depth)`` equal-volume sub-simplices."""
    tri = meshmod._TRI_CHILDREN if dim == 2 else meshmod._TET_CORNERS + meshmod._TET_OCTA[0]
    simplices = [np.eye(dim + 1)]
    for _ in range(depth):
        nxt = []
        for s in simplices:
            def node(v):
                return s[v] if isinstance(v, int) else 0.5 * (s[v[0]] + s[v[1]])
            nxt.extend(np.array([node(v) for v in child]) for child in tri)
        simplices = nxt
    return np.array([s.mean(axis=0) for s in simplices])


def _layer_load(mesh, shape, value, smoothing, G_vol, depth):
    """``int value * H(-level_set) * v_i`` for one layer."""
    _, vol = G_vol
    d = mesh.dim
    X = mesh.nodes[mesh.elements]
    cen = X.mean(axis=1)
    rad = np.linalg.norm(X - cen[:, None, :], axis=2).max(axis=1)
    eps = smoothing * 2 * rad
    ls = shape.level_set(cen)
    # level sets are 1-Lipschitz, so elements farther than rad + eps are uncut
    near = np.abs(ls) <= rad + eps + 1e-12
    inside = (~near) & (ls < 0)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements[inside], (value * vol[inside] / (d + 1))[:, None])

    lam = _subdivision(d, depth)
    S = len(lam)
    idx = np.flatnonzero(near)
    step = max(1, _CHUNK // S)
    for start in range(0, idx.size, step):
        e = idx[start:start + step]
        pts = np.einsum("sk,ekj->esj", lam, X[e]).reshape(-1, d)
        if smoothing > 0:
            h = smoothstep(-shape.level_set(pts), np.repeat(eps[e], S))
        else:
            h = shape.contains(pts).astype(float)
        h = h.reshape(len(e), S)
        contrib = (value * vol[e] / S)[:, None] * (h @ lam)
        np.add.at(out, mesh.elements[e], contrib)
    return out


def assemble_load(mesh, q, g_minus=None, smoothing=DEFAULT_SMOOTHING,
                  depth=SUBDIVISION_DEPTH, boundary_mass=None):
    """Right-hand side ``int q v + 1/2 oint g_minus v``.

    Elements that may meet a layer boundary are split ``depth`` times
    (red refinement, equal volumes) and integrated at sub-simplex
    centroids.  With ``smoothing > 0`` each layer indicator is replaced by
    a C^1 ramp of half-width ``smoothing * h_e`` across the level set, which
    keeps the load differentiable in the shape parameters.
    """
    g = _datum(g_minus)
    out = np.zeros(mesh.n_nodes)
    if q is not None:
        G_vol = _gradients(mesh)
        for shape, value in q.layers:
            if value != 0:
                out += _layer_load(mesh, shape, value, smoothing, G_vol, depth)
    if not g.is_zero:
        Mb = boundary_mass_matrix(mesh) if boundary_mass is None else boundary_mass
        out += 0.5 * (Mb @ g(mesh.nodes))
    return out


# --------------------------------------------------------------------------
# solve and measure

@dataclass(frozen=True, eq=False)
class FieldSolution:
    u: np.ndarray
    mesh: meshmod.Mesh

    def to_vtk(self, path, extra=None):
        pd = {"u": self.u}
        pd.update(extra or {})
        meshmod.write_vtk(path, self.mesh, point_data=pd)


def solve(system, load, rtol=CG_RTOL, maxiter=None):
    """Solve ``A u = load`` directly (small N) or by Jacobi-preconditioned CG.

    Raises
    ------
    SolverError
        When CG fails to reach ``rtol``; ``.residual`` holds the relative residual.
    """
    load = np.asarray(load, float)
    if system.direct:
        u = system.factorize().solve(load)
    else:
        dinv = 1.0 / system.A.diagonal()
        Mpre = spla.LinearOperator(system.A.shape, matvec=lambda x: dinv * x)
        u, info = spla.cg(system.A, load, rtol=rtol, atol=0.0, M=Mpre,
                          maxiter=maxiter or 20 * system.n)
        res = np.linalg.norm(system.A @ u - load) / max(np.linalg.norm(load), 1e-300)
        if info != 0 or res > 10 * rtol:
            raise SolverError(f"CG did not converge (relative residual {res:.3e})", res)
    if not np.all(np.isfinite(u)):
        raise SolverError("solution has non-finite entries")
    return FieldSolution(u, system.mesh)


@dataclass(frozen=True, eq=False)
class BoundaryMeasurement:
    """Sensor fluxes ``g = (u - g_minus) / 2``."""

    sensors: meshmod.SensorSet
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, float, copy=True)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.shape != (self.sensors.count,):
            raise ValidationError("one value per sensor required")

    def to_csv(self, path):
        write_measurement_csv(path, self.sensors.points, self.values)


def write_measurement_csv(path, points, values):
    d = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sensor_index"] + list("xyz"[:d]) + ["g_value"])
        for i, (p, g) in enumerate(zip(points, values)):
            w.writerow([i] + [repr(float(c)) for c in p] + [repr(float(g))])


def measure(sol, sensors, g_minus=None):
    """Interpolate ``u`` at the sensors and return ``(u - g_minus) / 2``."""
    if sensors.facet_nodes is None:
        sensors = meshmod.boundary_sensors(sol.mesh.radius, sensors.count, sol.mesh)
    P = sensors.interpolation_matrix(sol.mesh.n_nodes)
    return BoundaryMeasurement(sensors, 0.5 * (P @ sol.u - _datum(g_minus)(sensors.points)))


def forward(mesh, media, q, g_minus=None, sensors=None, smoothing=DEFAULT_SMOOTHING):
    """``F(q)``: assemble, load, solve, measure."""
    sensors = sensors if sensors is not None else meshmod.boundary_sensors(mesh.radius, 200, mesh)
    system = assemble(mesh, media)
    load = assemble_load(mesh, q, g_minus, smoothing, boundary_mass=system.boundary_mass)
    return measure(solve(system, load), sensors, g_minus)


class ForwardContext:
    """Forward map bound to one mesh, media, boundary datum and sensor set.

    The factorization and the ``g_minus`` part of the load are computed once;
    ``ctx(q)`` then costs one load assembly and one back-substitution.
    """

    def __init__(self, mesh, media, sensors=None, g_minus=None, smoothing=DEFAULT_SMOOTHING,
                 n_sensors=200, direct_max_nodes=None):
        self.mesh = mesh
        self.media = media
        self.g_minus = _datum(g_minus)
        self.smoothing = smoothing
        if sensors is None:
            sensors = meshmod.boundary_sensors(mesh.radius, n_sensors, mesh)
        else:
            # facet data always refers to this mesh
            facet, w = meshmod.locate_on_boundary(mesh, sensors.points)
            sensors = meshmod.SensorSet(sensors.points, facet, w, mesh.boundary_facets[facet])
        self.sensors = sensors
        self.system = assemble(mesh, media, direct_max_nodes)
        self.system.factorize()
        self._P = sensors.interpolation_matrix(mesh.n_nodes)
        self._g_load = assemble_load(mesh, None, self.g_minus, boundary_mass=self.system.boundary_mass)
        self._g_sensor = self.g_minus(sensors.points)
        self.n_solves = 0

    @property
    def omega(self):
        from .sources import Domain

        return Domain(self.mesh.radius, self.mesh.dim)

    def load(self, q):
        return assemble_load(self.mesh, q, None, self.smoothing) + self._g_load

    def solution(self, q):
        self.n_solves += 1
        return solve(self.system, self.load(q))

    def __call__(self, q):
        """Measurement vector ``g`` for source ``q``."""
        u = self.solution(q).u
        return 0.5 * (self._P @ u - self._g_sensor)

    def measurement(self, q):
        return BoundaryMeasurement(self.sensors, self(q))


def sharp_source_nodal(mesh, q):
    """Nodal values of ``q`` (sharp indicator), for plotting and export."""
    return eval_source(q, mesh.nodes)
