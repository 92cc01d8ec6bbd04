"""
Simplicial meshes of the disk/ball domain and boundary sensor placement.

Two generators are provided:

* :func:`build_disk_mesh` lays nodes on concentric rings (optionally with
  rings forced onto material interface radii), stitches neighbouring rings
  with a zipper strip and improves the result with constrained Lawson flips.
* :func:`build_ball_mesh` uses a cubed-sphere block layout with a rounded
  core, each hexahedron split into six tetrahedra.

Both return an immutable :class:`Mesh`.  Everything geometric that asks
"is this point on the boundary" uses ``tol_geom = 1e-9 * R``.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError, MeshQualityWarning, ResourceLimitError, ValidationError

MAX_NODES = 2_000_000
MIN_ANGLE_DEG = 20.0
MIN_RADIUS_RATIO = 0.2
MESH_FORMAT_TAG = "BLTMESH"
MESH_FORMAT_VERSION = 1


def tol_geom(R):
    return 1e-9 * R


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh of ``B_R(0)``.

    Attributes
    ----------
    nodes : ndarray, shape (N, dim)
    elements : ndarray, shape (E, dim + 1)
        Node indices, positively oriented.
    boundary_facets : ndarray, shape (F, dim)
        Outward-oriented facets on the boundary.
    region : ndarray, shape (E,)
        Integer region tag per element (radial band index).
    radius : float
        Radius ``R`` of the domain.
    interfaces : tuple of float
        Radii of material interfaces resolved by the mesh.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_facets: np.ndarray
    region: np.ndarray
    radius: float
    interfaces: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _readonly(self.nodes, float))
        object.__setattr__(self, "elements", _readonly(self.elements, np.int64))
        object.__setattr__(self, "boundary_facets", _readonly(self.boundary_facets, np.int64))
        object.__setattr__(self, "region", _readonly(self.region, np.int64))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "interfaces", tuple(float(r) for r in self.interfaces))
        d = self.nodes.shape[1]
        if d not in (2, 3):
            raise ValidationError(f"mesh dimension must be 2 or 3, got {d}")
        if self.elements.shape[1] != d + 1 or self.boundary_facets.shape[1] != d:
            raise ValidationError("element/facet arity does not match dimension")
        if self.region.shape != (self.elements.shape[0],):
            raise ValidationError("one region tag per element required")

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def signed_volumes(self):
        return signed_volumes(self.nodes, self.elements)

    def volumes(self):
        return np.abs(self.signed_volumes())

    def centroids(self):
        return self.nodes[self.elements].mean(axis=1)

    def edges(self):
        """Unique undirected edges as an (K, 2) array."""
        return _unique_edges(self.elements)

    def h_max(self):
        e = self.edges()
        return float(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1).max())

    def element_diameters(self):
        x = self.nodes[self.elements]
        k = self.dim + 1
        d = np.zeros(self.n_elements)
        for i, j in itertools.combinations(range(k), 2):
            d = np.maximum(d, np.linalg.norm(x[:, i] - x[:, j], axis=1))
        return d

    def boundary_nodes(self):
        return np.unique(self.boundary_facets)

    def quality(self):
        """Minimum angle in degrees (2D) or normalized radius ratio (3D) per element."""
        if self.dim == 2:
            return min_angles_deg(self.nodes, self.elements)
        return radius_ratios(self.nodes, self.elements)

    def quality_floor(self):
        return MIN_ANGLE_DEG if self.dim == 2 else MIN_RADIUS_RATIO

    def summary(self):
        q = self.quality()
        vol = self.volumes()
        return {
            "dim": self.dim,
            "nodes": self.n_nodes,
            "elements": self.n_elements,
            "boundary_facets": int(self.boundary_facets.shape[0]),
            "radius": self.radius,
            "interfaces": list(self.interfaces),
            "h_max": self.h_max(),
            "total_volume": float(vol.sum()),
            "min_quality": float(q.min()),
            "quality_measure": "min_angle_deg" if self.dim == 2 else "radius_ratio",
        }


# --------------------------------------------------------------------------
# elementary geometry

def signed_volumes(nodes, elements):
    x = nodes[elements]
    B = x[:, 1:, :] - x[:, :1, :]
    d = nodes.shape[1]
    return np.linalg.det(B) / math.factorial(d)


def min_angles_deg(nodes, tris):
    x = nodes[tris]
    ang = []
    for i in range(3):
        a = x[:, (i + 1) % 3] - x[:, i]
        b = x[:, (i + 2) % 3] - x[:, i]
        c = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        ang.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
    return np.min(ang, axis=0)


def radius_ratios(nodes, tets):
    """Normalized radius ratio ``3 r_in / r_circ`` (1 for the regular tetrahedron)."""
    x = nodes[tets]
    a = x[:, 1] - x[:, 0]
    b = x[:, 2] - x[:, 0]
    c = x[:, 3] - x[:, 0]
    vol6 = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    num = (np.sum(a * a, 1)[:, None] * np.cross(b, c)
           + np.sum(b * b, 1)[:, None] * np.cross(c, a)
           + np.sum(c * c, 1)[:, None] * np.cross(a, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        r_circ = np.linalg.norm(num, axis=1) / (2.0 * vol6)
        area = np.zeros(len(tets))
        for f in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            p, q, r = x[:, f[0]], x[:, f[1]], x[:, f[2]]
            area += 0.5 * np.linalg.norm(np.cross(q - p, r - p), axis=1)
        r_in = (vol6 / 2.0) / area
        ratio = 3.0 * r_in / r_circ
    return np.nan_to_num(ratio, nan=0.0)


def _unique_edges(elements):
    k = elements.shape[1]
    pairs = np.concatenate([elements[:, [i, j]] for i, j in itertools.combinations(range(k), 2)])
    pairs.sort(axis=1)
    return np.unique(pairs, axis=0)


def _orient(nodes, elements):
    elements = np.array(elements, dtype=np.int64)
    neg = signed_volumes(nodes, elements) < 0
    elements[neg, :2] = elements[neg, 1::-1]
    return elements


def _boundary_facets(nodes, elements):
    """Facets belonging to exactly one element, oriented outward."""
    d = nodes.shape[1]
    faces, opposite = [], []
    for i in range(d + 1):
        idx = [j for j in range(d + 1) if j != i]
        faces.append(elements[:, idx])
        opposite.append(elements[:, i])
    faces = np.concatenate(faces)
    opposite = np.concatenate(opposite)
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    once = counts[inv] == 1
    f = faces[once].copy()
    opp = opposite[once]
    # orient so that the facet normal points away from the opposite vertex
    p0 = nodes[f[:, 0]]
    if d == 2:
        t = nodes[f[:, 1]] - p0
        n = np.column_stack([t[:, 1], -t[:, 0]])
    else:
        n = np.cross(nodes[f[:, 1]] - p0, nodes[f[:, 2]] - p0)
    flip = np.sum(n * (nodes[opp] - p0), axis=1) > 0
    f[flip, :2] = f[flip, 1::-1]
    return f


def _region_tags(centroids, interfaces):
    r = np.linalg.norm(centroids, axis=1)
    return np.searchsorted(np.asarray(sorted(interfaces), float), r, side="left")


def _check_resources(n_nodes, max_nodes):
    if n_nodes > max_nodes:
        raise ResourceLimitError(
            f"mesh would have about {n_nodes} nodes, above the cap of {max_nodes}")


def _warn_quality(mesh):
    q = mesh.quality()
    floor = mesh.quality_floor()
    if q.min() < floor:
        warnings.warn(
            f"mesh quality {q.min():.3g} below floor {floor} "
            f"({int(np.sum(q < floor))} of {mesh.n_elements} elements)",
            MeshQualityWarning, stacklevel=3)


# --------------------------------------------------------------------------
# 2D

def _ring_radii(R, h, interfaces):
    breaks = [0.0] + sorted(r for r in interfaces if 0 < r < R) + [R]
    radii = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        m = max(1, math.ceil((b - a) / h - 1e-9))
        radii.extend(a + (b - a) * k / m for k in range(1, m + 1))
    return radii


def _zip_rings(pts, inner, outer):
    """Triangulate the strip between two closed rings given as index lists."""
    n_in, n_out = len(inner), len(outer)
    a0 = math.atan2(*pts[inner[0]][::-1])
    ang_out = np.arctan2(pts[outer, 1], pts[outer, 0])
    j0 = int(np.argmin(np.abs(np.angle(np.exp(1j * (ang_out - a0))))))
    tris = []
    i = j = 0
    while i < n_in or j < n_out:
        a, a_next = inner[i % n_in], inner[(i + 1) % n_in]
        b, b_next = outer[(j0 + j) % n_out], outer[(j0 + j + 1) % n_out]
        if i == n_in:
            step_in = False
        elif j == n_out:
            step_in = True
        else:
            step_in = (np.linalg.norm(pts[a_next] - pts[b])
                       <= np.linalg.norm(pts[a] - pts[b_next]))
        if step_in:
            tris.append((a, a_next, b))
            i += 1
        else:
            tris.append((a, b, b_next))
            j += 1
    return tris


def _angle_at(pts, apex, p, q):
    u = pts[p] - pts[apex]
    v = pts[q] - pts[apex]
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.acos(max(-1.0, min(1.0, c)))


def _lawson_flips(pts, tris, constrained, max_passes=50):
    """Edge flips toward the Delaunay triangulation, never touching constrained edges."""
    tris = [list(t) for t in tris]
    for _ in range(max_passes):
        edge_map = {}
        for ti, t in enumerate(tris):
            for k in range(3):
                e = tuple(sorted((t[k], t[(k + 1) % 3])))
                edge_map.setdefault(e, []).append(ti)
        flipped = False
        touched = set()
        for e, ts in edge_map.items():
            if len(ts) != 2 or e in constrained:
                continue
            t1, t2 = ts
            if t1 in touched or t2 in touched:
                continue
            i, j = e
            k = next(v for v in tris[t1] if v not in e)
            l = next(v for v in tris[t2] if v not in e)
            if _angle_at(pts, k, i, j) + _angle_at(pts, l, i, j) <= math.pi + 1e-12:
                continue
            # a non-Delaunay edge always sits in a convex quad, so the flip is valid
            tris[t1], tris[t2] = [k, l, i], [l, k, j]
            touched.update((t1, t2))
            flipped = True
        if not flipped:
            break
    return tris


def build_disk_mesh(R, h, interfaces=(), max_nodes=MAX_NODES):
    """Triangulate the disk ``B_R(0)``.

    Parameters
    ----------
    R : float
        Disk radius.
    h : float
        Target element size, ``0 < h < R``.
    interfaces : sequence of float, optional
        Radii of circles that must be represented by mesh edges (material
        interfaces, source outlines used in convergence studies).
    max_nodes : int
        Resource cap on the node count.

    Returns
    -------
    Mesh
    """
    if not (R > 0 and 0 < h < R):
        raise ValidationError(f"need 0 < h < R, got R={R}, h={h}")
    radii = _ring_radii(R, h, interfaces)
    counts = [max(6, math.ceil(2 * math.pi * r / h - 1e-9)) for r in radii]
    _check_resources(1 + sum(counts), max_nodes)

    pts = [np.zeros(2)]
    rings = []
    for k, (r, n) in enumerate(zip(radii, counts)):
        offset = 0.5 * (2 * math.pi / n) * (k % 2)
        th = offset + 2 * math.pi * np.arange(n) / n
        start = len(pts)
        pts.extend(np.column_stack([r * np.cos(th), r * np.sin(th)]))
        rings.append(list(range(start, start + n)))
    pts = np.array(pts)

    tris = [(0, rings[0][i], rings[0][(i + 1) % len(rings[0])]) for i in range(len(rings[0]))]
    for inner, outer in zip(rings[:-1], rings[1:]):
        tris.extend(_zip_rings(pts, inner, outer))

    constrained = set()
    keep = [k for k, r in enumerate(radii) if any(abs(r - s) < 1e-12 for s in interfaces)]
    for k in keep + [len(radii) - 1]:
        ring = rings[k]
        constrained.update(tuple(sorted((ring[i], ring[(i + 1) % len(ring)])))
                           for i in range(len(ring)))
    tris = _lawson_flips(pts, tris, constrained)

    elements = _orient(pts, np.array(tris))
    facets = _boundary_facets(pts, elements)
    region = _region_tags(pts[elements].mean(axis=1), interfaces)
    mesh = Mesh(pts, elements, facets, region, R, tuple(r for r in interfaces if 0 < r < R))
    _warn_quality(mesh)
    return mesh


# --------------------------------------------------------------------------
# 3D

# hex vertex (a, b, c) in {0,1}^3 has local id a*4 + b*2 + c


def _equiangular(n):
    t = np.tan(np.linspace(-math.pi / 4, math.pi / 4, n + 1))
    t = 0.5 * (t - t[::-1])
    t[0], t[-1] = -1.0, 1.0
    return t


def _hexes_of_grid(ids):
    """Hex connectivity (local ordering a*4+b*2+c) of a 3D array of node ids."""
    n0, n1, n2 = (s - 1 for s in ids.shape)
    cols = []
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                cols.append(ids[a:a + n0, b:b + n1, c:c + n2].ravel())
    return np.column_stack(cols)


def _kuhn_split(hexes):
    """Split hexahedra into six tetrahedra sharing the (0,0,0)-(1,1,1) diagonal.

    Each quad face is then cut along the diagonal joining its low-low and
    high-high corners.  Neighbouring blocks whose local axes increase in
    the same direction along a shared face therefore conform.
    """
    out = []
    for perm in itertools.permutations(range(3)):
        loc = [0]
        cur = [0, 0, 0]
        for ax in perm:
            cur[ax] = 1
            loc.append(cur[0] * 4 + cur[1] * 2 + cur[2])
        out.append(hexes[:, loc])
    return np.concatenate(out)


def _blend(p, rho, w):
    """Move ``p`` (a point of a cube surface) towards its sphere projection."""
    pn = np.linalg.norm(p, axis=-1, keepdims=True)
    return rho * ((1.0 - w) * p + w * p / pn)


# tangential spacing relative to h so that the outer cell diagonals stay below h
_SURFACE_FACTOR = 0.65
_CORE_FRACTION = 0.5
_CORE_ROUNDING = 0.5


def build_ball_mesh(R, h, interfaces=(), max_nodes=MAX_NODES):
    """Tetrahedralize the ball ``B_R(0)``.

    Cubed-sphere layout.  A core block with an equiangular tensor grid is
    mapped to a rounded cube (half-side ``R/2``), and six shell blocks
    interpolate from the rounded cube surface out to the sphere, becoming
    progressively rounder.  Every hexahedron is split into six tetrahedra
    (:func:`_kuhn_split`).  Interfaces are recorded for region tagging only;
    the mesh does not conform to them.
    """
    if not (R > 0 and 0 < h < R):
        raise ValidationError(f"need 0 < h < R, got R={R}, h={h}")
    a = _CORE_FRACTION * R
    w0 = _CORE_ROUNDING
    nc = max(2, math.ceil(0.5 * math.pi * R / (_SURFACE_FACTOR * h) - 1e-9))
    nr = max(1, math.ceil((R - a) / h - 1e-9))
    _check_resources((nc + 1) ** 3 + 6 * (nc + 1) ** 2 * nr, max_nodes)
    t = _equiangular(nc)

    blocks = []
    c = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1)
    ti = np.max(np.abs(c), axis=-1, keepdims=True)
    inner = ti > 0
    p = np.where(inner, c / np.where(inner, ti, 1.0), 1.0)
    blocks.append(np.where(inner, _blend(p, a * ti, w0 * ti), 0.0))
    s = np.linspace(0.0, 1.0, nr + 1)
    U, V, S = np.meshgrid(t, t, s, indexing="ij")
    S = S[..., None]
    for axis in range(3):
        for sign in (-1.0, 1.0):
            q = np.empty(U.shape + (3,))
            others = [ax for ax in range(3) if ax != axis]
            q[..., axis] = sign
            q[..., others[0]] = U
            q[..., others[1]] = V
            blocks.append(_blend(q, a + (R - a) * S, w0 + (1.0 - w0) * S))

    coords = np.concatenate([b.reshape(-1, 3) for b in blocks])
    key = np.round(coords / (1e-9 * R)).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    pts = coords[first]
    hexes = []
    offset = 0
    for b in blocks:
        n = b.shape[0] * b.shape[1] * b.shape[2]
        hexes.append(_hexes_of_grid(inverse[offset:offset + n].reshape(b.shape[:3])))
        offset += n
    tets = _kuhn_split(np.concatenate(hexes))

    # snap sphere nodes exactly onto |x| = R
    r = np.linalg.norm(pts, axis=1)
    on = np.abs(r - R) < 1e-6 * R
    pts[on] *= (R / r[on])[:, None]
    elements = _orient(pts, tets)
    facets = _boundary_facets(pts, elements)
    region = _region_tags(pts[elements].mean(axis=1), interfaces)
    mesh = Mesh(pts, elements, facets, region, R, tuple(r for r in interfaces if 0 < r < R))
    if nc < 4:
        warnings.warn(f"h={h} resolves B_{R} with only {nc} cells per cube face",
                      MeshQualityWarning, stacklevel=2)
    _warn_quality(mesh)
    return mesh


def build_mesh(dim, R, h, interfaces=(), max_nodes=MAX_NODES):
    if dim == 2:
        return build_disk_mesh(R, h, interfaces, max_nodes)
    if dim == 3:
        return build_ball_mesh(R, h, interfaces, max_nodes)
    raise ValidationError(f"dim must be 2 or 3, got {dim}")


# --------------------------------------------------------------------------
# refinement

# Bey's red refinement of a tetrahedron, in terms of local vertex ids 0..3
# and edge midpoints keyed by vertex pairs.
_TET_CORNERS = [
    (0, (0, 1), (0, 2), (0, 3)),
    ((0, 1), 1, (1, 2), (1, 3)),
    ((0, 2), (1, 2), 2, (2, 3)),
    ((0, 3), (1, 3), (2, 3), 3),
]


def _octahedron_split(a, b, c, d):
    """Four tets of the inner octahedron cut along the (ab)-(cd) diagonal."""
    ring = [(a, c), (a, d), (b, d), (b, c)]
    ring = [tuple(sorted(e)) for e in ring]
    return [((a, b), (c, d), ring[k], ring[(k + 1) % 4]) for k in range(4)]


# the three choices of interior diagonal
_TET_OCTA = [_octahedron_split(0, 1, 2, 3), _octahedron_split(0, 2, 1, 3),
             _octahedron_split(0, 3, 1, 2)]
_TET_DIAGONALS = [((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))]
_TRI_CHILDREN = [
    (0, (0, 1), (0, 2)),
    ((0, 1), 1, (1, 2)),
    ((0, 2), (1, 2), 2),
    ((0, 1), (1, 2), (0, 2)),
]
_SEG_CHILDREN = [(0, (0, 1)), ((0, 1), 1)]
_FACET3_CHILDREN = _TRI_CHILDREN


def refine_uniform(mesh):
    """Split every simplex into ``2**dim`` children.

    Midpoints of boundary edges are projected radially onto ``|x| = R`` and
    midpoints of edges lying on an interface circle/sphere onto that
    radius.  Children inherit the region tag of their parent.
    """
    d = mesh.dim
    nodes = mesh.nodes
    edges = mesh.edges()
    N = mesh.n_nodes
    mid = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])

    R = mesh.radius
    tol = 1e-6 * R
    rn = np.linalg.norm(nodes, axis=1)
    bnd = np.zeros(N, bool)
    bnd[mesh.boundary_nodes()] = True
    b_edge = bnd[edges[:, 0]] & bnd[edges[:, 1]]
    # boundary edges: both ends on the boundary and the edge lies in a facet
    fedges = _unique_edges(mesh.boundary_facets) if d == 3 else np.sort(mesh.boundary_facets, axis=1)
    fkey = fedges[:, 0].astype(np.int64) * N + fedges[:, 1]
    is_bedge = b_edge & np.isin(edges[:, 0].astype(np.int64) * N + edges[:, 1], fkey)
    target = np.full(len(edges), np.nan)
    target[is_bedge] = R
    for s in mesh.interfaces:
        on = (np.abs(rn[edges[:, 0]] - s) < tol) & (np.abs(rn[edges[:, 1]] - s) < tol)
        target[on & np.isnan(target)] = s
    proj = ~np.isnan(target)
    mid[proj] *= (target[proj] / np.linalg.norm(mid[proj], axis=1))[:, None]

    new_nodes = np.vstack([nodes, mid])
    ekey = edges[:, 0].astype(np.int64) * N + edges[:, 1]

    def local_ids(simplices):
        k = simplices.shape[1]
        cols = {i: simplices[:, i] for i in range(k)}
        for i, j in itertools.combinations(range(k), 2):
            a = np.minimum(simplices[:, i], simplices[:, j]).astype(np.int64)
            b = np.maximum(simplices[:, i], simplices[:, j])
            cols[(i, j)] = N + np.searchsorted(ekey, a * N + b)
        return cols

    ids = local_ids(mesh.elements)
    if d == 2:
        children = np.concatenate([np.column_stack([ids[v] for v in c]) for c in _TRI_CHILDREN])
    else:
        # cut each inner octahedron along its shortest diagonal
        lens = np.column_stack([
            np.linalg.norm(new_nodes[ids[p]] - new_nodes[ids[q]], axis=1)
            for p, q in _TET_DIAGONALS])
        choice = np.argmin(lens, axis=1)
        blocks = [np.column_stack([ids[v] for v in c]) for c in _TET_CORNERS]
        for child_k in range(4):
            cand = np.stack([np.column_stack([ids[v] for v in octa[child_k]]) for octa in _TET_OCTA])
            blocks.append(cand[choice, np.arange(len(choice))])
        children = np.concatenate(blocks)
    region = np.tile(mesh.region, 4 if d == 2 else 8)

    fids = local_ids(mesh.boundary_facets)
    fpattern = _SEG_CHILDREN if d == 2 else _FACET3_CHILDREN
    facets = np.concatenate([np.column_stack([fids[v] for v in child]) for child in fpattern])

    elements = _orient(new_nodes, children)
    # re-derive facet orientation from the refined elements
    facets = _orient_facets(new_nodes, elements, facets)
    return Mesh(new_nodes, elements, facets, region, R, mesh.interfaces)


def _orient_facets(nodes, elements, facets):
    derived = _boundary_facets(nodes, elements)
    if len(derived) != len(facets):
        raise GeometryError("refined boundary facets do not match element faces")
    return derived


# --------------------------------------------------------------------------
# validation

def check_mesh(mesh):
    """Return a list of violated mesh invariants (empty when valid)."""
    problems = []
    vol = mesh.signed_volumes()
    if vol.min() <= 0:
        problems.append(f"{int(np.sum(vol <= 0))} elements with nonpositive volume")
    f = mesh.boundary_facets
    if mesh.dim == 2:
        counts = np.bincount(f.ravel(), minlength=mesh.n_nodes)
        used = counts[counts > 0]
        if not np.all(used == 2):
            problems.append("boundary is not a closed curve")
    else:
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        _, c = np.unique(e, axis=0, return_counts=True)
        if not np.all(c == 2):
            problems.append("boundary surface is not watertight")
    r = np.linalg.norm(mesh.nodes[np.unique(f)], axis=1)
    if np.max(np.abs(r - mesh.radius)) > tol_geom(mesh.radius):
        problems.append("boundary facet node off |x| = R")
    return problems


# --------------------------------------------------------------------------
# sensors

@dataclass(frozen=True, eq=False)
class SensorSet:
    """Boundary sensor points with their facet interpolation data."""

    points: np.ndarray
    facet: np.ndarray = None
    weights: np.ndarray = None
    facet_nodes: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "points", _readonly(self.points, float))
        for name, dt in (("facet", np.int64), ("weights", float), ("facet_nodes", np.int64)):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _readonly(v, dt))

    @property
    def count(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def interpolation_matrix(self, n_nodes):
        from scipy import sparse

        if self.facet_nodes is None:
            raise GeometryError("sensors are not associated with a mesh")
        M, k = self.facet_nodes.shape
        rows = np.repeat(np.arange(M), k)
        return sparse.csr_matrix((self.weights.ravel(), (rows, self.facet_nodes.ravel())),
                                 shape=(M, n_nodes))


def sensor_points(R, M, dim):
    if M < 1:
        raise ValidationError(f"sensor count must be positive, got {M}")
    if dim == 2:
        th = 2 * math.pi * np.arange(M) / M
        return R * np.column_stack([np.cos(th), np.sin(th)])
    k = np.arange(M) + 0.5
    z = 1.0 - 2.0 * k / M
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.arange(M) * math.pi * (3.0 - math.sqrt(5.0))
    return R * np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def boundary_sensors(R, M, mesh=None):
    """Place ``M`` sensors on ``|x| = R``.

    Equiangular on the circle; Fibonacci lattice on the sphere.  When a mesh
    is given each sensor is located in the boundary facet hit by the ray
    from the origin through it, and barycentric weights are stored for
    linear interpolation.
    """
    dim = 2 if mesh is None else mesh.dim
    pts = sensor_points(R, M, dim)
    if mesh is None:
        return SensorSet(pts)
    facet, w = locate_on_boundary(mesh, pts)
    return SensorSet(pts, facet, w, mesh.boundary_facets[facet])


def locate_on_boundary(mesh, points, n_candidates=12):
    """Find the boundary facet intersected by the ray from 0 through each point."""
    F = mesh.boundary_facets
    P = mesh.nodes[F]                      # (F, d, d)
    cen = P.mean(axis=1)
    cdir = cen / np.linalg.norm(cen, axis=1)[:, None]
    d = mesh.dim
    facet = np.empty(len(points), np.int64)
    weights = np.empty((len(points), d))
    for s, p in enumerate(np.asarray(points, float)):
        r = np.linalg.norm(p)
        if abs(r - mesh.radius) > 1e-6 * mesh.radius:
            raise GeometryError(f"sensor {s} at {p} is not on the boundary |x| = {mesh.radius}")
        u = p / r
        cand = np.argsort(-(cdir @ u))[:n_candidates]
        found = False
        for f in cand:
            A = np.column_stack([u] + [-(P[f, k] - P[f, 0]) for k in range(1, d)])
            try:
                sol = np.linalg.solve(A, P[f, 0])
            except np.linalg.LinAlgError:
                continue
            beta = sol[1:]
            w = np.concatenate([[1.0 - beta.sum()], beta])
            if sol[0] > 0 and np.all(w >= -1e-9):
                facet[s] = f
                weights[s] = np.clip(w, 0.0, None) / np.clip(w, 0.0, None).sum()
                found = True
                break
        if not found:
            raise GeometryError(f"sensor {s} at {p} not locatable in any boundary facet")
    return facet, weights


# --------------------------------------------------------------------------
# I/O

def save_mesh(mesh, path):
    """Write the plain-text mesh format.

    Layout::

        BLTMESH 1 <dim> <n_nodes> <n_elements> <n_facets> <R>
        interfaces <k> <r_1> ... <r_k>
        <x> <y> [<z>]                  (n_nodes lines)
        <v_0> ... <v_dim> <region>      (n_elements lines)
        <v_0> ... <v_dim-1>             (n_facets lines)
    """
    lines = [f"{MESH_FORMAT_TAG} {MESH_FORMAT_VERSION} {mesh.dim} {mesh.n_nodes} "
             f"{mesh.n_elements} {len(mesh.boundary_facets)} {mesh.radius!r}",
             " ".join(["interfaces", str(len(mesh.interfaces))] + [repr(r) for r in mesh.interfaces])]
    lines += [" ".join(repr(float(c)) for c in p) for p in mesh.nodes]
    lines += [" ".join(map(str, e)) + f" {r}" for e, r in zip(mesh.elements, mesh.region)]
    lines += [" ".join(map(str, f)) for f in mesh.boundary_facets]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path):
    text = Path(path).read_text().splitlines()
    try:
        head = text[0].split()
        if head[0] != MESH_FORMAT_TAG or int(head[1]) != MESH_FORMAT_VERSION:
            raise ValidationError(f"{path}: not a version {MESH_FORMAT_VERSION} mesh file")
        dim, nn, ne, nf = map(int, head[2:6])
        R = float(head[6])
        itf = text[1].split()
        interfaces = tuple(float(v) for v in itf[2:2 + int(itf[1])])
        body = text[2:]
        nodes = np.array([list(map(float, ln.split())) for ln in body[:nn]])
        el = np.array([list(map(int, ln.split())) for ln in body[nn:nn + ne]], dtype=np.int64)
        fc = np.array([list(map(int, ln.split())) for ln in body[nn + ne:nn + ne + nf]],
                      dtype=np.int64)
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed mesh file ({exc})") from exc
    if nodes.shape != (nn, dim) or el.shape != (ne, dim + 2) or fc.shape != (nf, dim):
        raise ValidationError(f"{path}: table sizes do not match header")
    return Mesh(nodes, el[:, :-1], fc, el[:, -1], R, interfaces)


def write_vtk(path, mesh, point_data=None, cell_data=None, title="bltrec"):
    """Legacy ASCII VTK unstructured grid."""
    d = mesh.dim
    cell_type = 5 if d == 2 else 10
    k = d + 1
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {mesh.n_nodes} double"]
    pts = mesh.nodes if d == 3 else np.column_stack([mesh.nodes, np.zeros(mesh.n_nodes)])
    out += [" ".join(repr(float(c)) for c in p) for p in pts]
    out.append(f"CELLS {mesh.n_elements} {mesh.n_elements * (k + 1)}")
    out += [f"{k} " + " ".join(map(str, e)) for e in mesh.elements]
    out.append(f"CELL_TYPES {mesh.n_elements}")
    out += [str(cell_type)] * mesh.n_elements
    if point_data:
        out.append(f"POINT_DATA {mesh.n_nodes}")
        for name, vals in point_data.items():
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [repr(float(v)) for v in vals]
    cdata = {"region": mesh.region}
    cdata.update(cell_data or {})
    out.append(f"CELL_DATA {mesh.n_elements}")
    for name, vals in cdata.items():
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [repr(float(v)) for v in vals]
    Path(path).write_text("\n".join(out) + "\n")
