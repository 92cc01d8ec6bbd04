"""
Decay of complex geometric optics (CGO) solutions on truncated corners.

In the constant-coefficient case the CGO solution is the exact harmonic
function ``w(x) = exp(-tau (xi + i xi_perp) . (x - x_c)) / sqrt(D)``.  This
module integrates ``w`` and related quantities over a truncated cone
``S_h = cone ∩ B_h(x_c)`` and fits how they decay in ``tau``.

Integrals use a product rule in polar/spherical coordinates aligned with the
cone axis: Gauss-Legendre in angle (refined by doubling until two levels
agree) times graded Gauss-Legendre panels in radius whose width follows the
decay length ``1 / (tau rho)``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import QuadratureError, ValidationError

_ORTHO_TOL = 1e-12
_DECAY_CUTOFF = 50.0
_MAX_ANGULAR = 1024
_CHUNK = 2 ** 21


def _unit(v, name):
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if not n > 0:
        raise ValidationError(f"{name} must be nonzero")
    return v / n


def _perp_basis(v):
    """Orthonormal vectors completing ``v`` (2D: one, 3D: two)."""
    if v.size == 2:
        return np.array([[-v[1], v[0]]])
    a = np.eye(3)[np.argmin(np.abs(v))]
    b1 = np.cross(v, a)
    b1 /= np.linalg.norm(b1)
    return np.array([b1, np.cross(v, b1)])


@dataclass(frozen=True, eq=False)
class ConeSpec:
    """Truncated cone with apex, axis, half-angle and truncation radius.

    ``kind="polyhedral"`` (3D only) takes ``edges`` in cyclic order; the
    edges must lie within ``half_angle`` of the axis and the axis must lie
    inside the polyhedral cone.
    """

    apex: np.ndarray
    axis: np.ndarray
    half_angle: float
    h: float = 1.0
    kind: str = "conic"
    edges: Optional[np.ndarray] = None

    def __post_init__(self):
        apex = np.asarray(self.apex, float)
        axis = _unit(self.axis, "axis")
        bad = []
        if apex.shape != axis.shape or apex.size not in (2, 3):
            bad.append("apex and axis must be 2D or 3D points of equal dimension")
        if not 0 < self.half_angle < math.pi / 2:
            bad.append(f"half_angle must lie in (0, pi/2), got {self.half_angle}")
        if not self.h > 0:
            bad.append(f"truncation h must be > 0, got {self.h}")
        if self.kind not in ("conic", "polyhedral"):
            bad.append(f"unknown cone kind {self.kind!r}")
        object.__setattr__(self, "apex", apex)
        object.__setattr__(self, "axis", axis)
        if self.kind == "polyhedral" and not bad:
            bad.extend(self._check_edges())
        if bad:
            raise ValidationError("; ".join(bad), bad)

    def _check_edges(self):
        if self.apex.size != 3:
            return ["polyhedral cones are 3D"]
        if self.edges is None or len(self.edges) < 3:
            return ["polyhedral cone needs at least 3 edges"]
        E = np.array([_unit(e, "edge") for e in self.edges])
        object.__setattr__(self, "edges", E)
        bad = []
        ang = np.arccos(np.clip(E @ self.axis, -1, 1))
        if np.any(ang > self.half_angle + 1e-12):
            bad.append("edges must lie inside the conic hull of half_angle")
        N = self.face_normals()
        if np.any(N @ self.axis <= 0):
            bad.append("axis must lie inside the polyhedral cone")
        k = len(E)
        for j in range(k):
            others = np.delete(np.arange(k), [j, (j + 1) % k])
            if np.any(E[others] @ N[j] <= 1e-12):
                bad.append("polyhedral cone must be strictly convex with edges in cyclic order")
                break
        return bad

    @property
    def dim(self):
        return self.apex.size

    def face_normals(self):
        """Inward normals of the faces spanned by consecutive edges."""
        E = self.edges
        N = np.cross(E, np.roll(E, -1, axis=0))
        N /= np.linalg.norm(N, axis=1)[:, None]
        return N * np.sign(N @ E.mean(axis=0))[:, None]

    def to_dict(self):
        d = {"apex": self.apex.tolist(), "axis": self.axis.tolist(),
             "half_angle": self.half_angle, "h": self.h, "kind": self.kind}
        if self.edges is not None:
            d["edges"] = np.asarray(self.edges).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["apex"], d["axis"], d["half_angle"], d.get("h", 1.0),
                   d.get("kind", "conic"), d.get("edges"))


@dataclass(frozen=True, eq=False)
class CGOParams:
    tau: float
    xi: np.ndarray
    xi_perp: np.ndarray
    D: float = 1.0

    def __post_init__(self):
        xi, xp = np.asarray(self.xi, float), np.asarray(self.xi_perp, float)
        bad = []
        if not self.tau > 0:
            bad.append(f"tau must be > 0, got {self.tau}")
        if not self.D > 0:
            bad.append(f"D must be > 0, got {self.D}")
        if xi.shape != xp.shape:
            bad.append("xi and xi_perp differ in dimension")
        elif (abs(xi @ xi - 1) > _ORTHO_TOL or abs(xp @ xp - 1) > _ORTHO_TOL
              or abs(xi @ xp) > _ORTHO_TOL):
            bad.append("xi and xi_perp must be orthonormal")
        if bad:
            raise ValidationError("; ".join(bad), bad)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "xi_perp", xp)

    @property
    def zeta(self):
        """``xi + i xi_perp``; satisfies ``zeta . zeta = 0``."""
        return self.xi + 1j * self.xi_perp

    @classmethod
    def aligned(cls, cone, tau, D=1.0):
        """``xi`` along the cone axis, ``xi_perp`` the first perpendicular."""
        return cls(tau, cone.axis, _perp_basis(cone.axis)[0], D)

    def with_tau(self, tau):
        return CGOParams(tau, self.xi, self.xi_perp, self.D)


def cgo_field(params, p, x_c):
    """``exp(-tau zeta . (p - x_c)) / sqrt(D)`` at one point or an array of points."""
    z = (np.asarray(p, float) - np.asarray(x_c, float)) @ params.zeta
    return np.exp(-params.tau * z) / math.sqrt(params.D)


def cgo_gradient(params, p, x_c):
    w = cgo_field(params, p, x_c)
    return -params.tau * np.multiply.outer(w, params.zeta)


def harmonicity_residual(params, x_c, points, step=1e-4):
    """Central-difference Laplacian of Re w and Im w, relative to ``tau^2 |w|``.

    Returns the maximum over points and over both parts.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    n = pts.shape[1]
    w0 = cgo_field(params, pts, x_c)
    lap = -2 * n * w0
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        lap = lap + cgo_field(params, pts + e, x_c) + cgo_field(params, pts - e, x_c)
    lap /= step ** 2
    scale = params.tau ** 2 * np.abs(w0)
    return float(max(np.max(np.abs(lap.real) / scale), np.max(np.abs(lap.imag) / scale)))


def _arc_min(xi, a, b):
    """Minimum of ``xi . d`` over the great-circle arc from unit ``a`` to unit ``b``."""
    v = b - (b @ a) * a
    nv = np.linalg.norm(v)
    if nv < 1e-15:
        return float(xi @ a)
    v /= nv
    span = math.atan2(nv, b @ a)
    A, B = xi @ a, xi @ v
    cands = [A, A * math.cos(span) + B * math.sin(span)]
    t = (math.atan2(B, A) + math.pi) % (2 * math.pi)
    if t <= span:
        cands.append(A * math.cos(t) + B * math.sin(t))
    return float(min(cands))


def rho(cone, xi):
    """``min over cone directions d of xi . d``; non-positive means the decay condition fails."""
    xi = _unit(xi, "xi")
    if cone.kind == "conic":
        ang = math.acos(float(np.clip(xi @ cone.axis, -1, 1)))
        return math.cos(min(ang + cone.half_angle, math.pi))
    E = cone.edges
    if np.all(cone.face_normals() @ -xi >= 0):
        return -1.0
    return min(_arc_min(xi, E[j], E[(j + 1) % len(E)]) for j in range(len(E)))


# --------------------------------------------------------------------------
# quadrature

def _gauss(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _radial_rule(h, tau, rho_, order):
    """Graded panels on ``[0, min(h, cutoff)]`` sized to the decay length."""
    L = 1.0 / (tau * max(rho_, 1e-3))
    top = min(h, _DECAY_CUTOFF * L)
    first = min(L, top)
    edges = [0.0] + [first * 2.0 ** -k for k in range(30, 0, -1)] + [first]
    width = L * max(rho_, 1e-3) / math.sqrt(2)
    if top > first:
        m = int(math.ceil((top - first) / width))
        edges += list(np.linspace(first, top, m + 1)[1:])
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = _gauss(order, a, b)
        nodes.append(x)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def _directions(cone, n):
    """Unit directions and angular weights (measure on the sphere) with ``n`` nodes per axis."""
    v = cone.axis
    if cone.dim == 2:
        t, w = _gauss(n, -cone.half_angle, cone.half_angle)
        u = _perp_basis(v)[0]
        return np.outer(np.cos(t), v) + np.outer(np.sin(t), u), w
    b1, b2 = _perp_basis(v)
    if cone.kind == "conic":
        t, wt = _gauss(n, 0.0, cone.half_angle)
        phi = 2 * math.pi * np.arange(n) / n
        wphi = np.full(n, 2 * math.pi / n)
        T, P = np.meshgrid(t, phi, indexing="ij")
        W = np.outer(wt * np.sin(t), wphi)
    else:
        # azimuth panels between edge azimuths; polar angle up to the exit face
        E = cone.edges
        az = np.sort(np.mod(np.arctan2(E @ b2, E @ b1), 2 * math.pi))
        az = np.append(az, az[0] + 2 * math.pi)
        N = cone.face_normals()
        Ps, Ws_phi = [], []
        for a, b in zip(az[:-1], az[1:]):
            p, w = _gauss(n, a, b)
            Ps.append(p)
            Ws_phi.append(w)
        phi, wphi = np.concatenate(Ps), np.concatenate(Ws_phi)
        u = np.outer(np.cos(phi), b1) + np.outer(np.sin(phi), b2)
        nv, nu = N @ v, u @ N.T
        with np.errstate(divide="ignore"):
            tj = np.where(nu < 0, np.arctan2(nv[None, :], -nu), math.pi / 2)
        tmax = tj.min(axis=1)
        s, ws = _gauss(n, 0.0, 1.0)
        T = np.outer(tmax, s)
        P = np.repeat(phi[:, None], n, axis=1)
        W = (wphi * tmax)[:, None] * ws[None, :] * np.sin(T)
    T, P, W = T.ravel(), P.ravel(), W.ravel()
    d = (np.cos(T)[:, None] * v + np.sin(T)[:, None]
         * (np.cos(P)[:, None] * b1 + np.sin(P)[:, None] * b2))
    return d, W


def _product_sum(c, wd, r, wr, radial_pow):
    """``sum_k wd_k sum_p wr_p r_p^pow exp(-c_k r_p)`` in memory-bounded chunks."""
    rw = wr * r ** radial_pow
    step = max(1, _CHUNK // r.size)
    total = 0.0 + 0.0j
    for s in range(0, c.size, step):
        E = np.exp(-np.outer(c[s:s + step], r))
        total += wd[s:s + step] @ (E @ rw)
    return total


def _integrate(cone, rate, radial_pow, tau, rho_, rtol):
    """``int_{S_h} |x - x_c|^(radial_pow - n + 1) exp(-rate(d) |x - x_c|)``.

    ``rate`` maps unit directions to complex decay rates.
    """
    n = 16
    prev = None
    while n <= _MAX_ANGULAR:
        order = 16 if prev is None else 24
        r, wr = _radial_rule(cone.h, tau, rho_, order)
        d, wd = _directions(cone, n)
        val = _product_sum(rate(d), wd, r, wr, radial_pow)
        if prev is not None:
            err = abs(val - prev) / max(abs(val), 1e-300)
            if err <= rtol:
                return val
        prev = val
        n *= 2
    raise QuadratureError(f"angular refinement did not reach rtol {rtol} "
                          f"with {_MAX_ANGULAR} nodes per axis", achieved=err)


def cone_integral(cone, params, alpha=0.0, rtol=1e-8):
    """``int_{S_h} |x - x_c|^alpha w dx``.

    Raises
    ------
    ValidationError
        If the decay condition fails (``rho <= 0``) or ``alpha`` is outside ``[0, 1)``.
    QuadratureError
        If the requested tolerance is not reached; ``.achieved`` holds the estimate.
    """
    rho_ = rho(cone, params.xi)
    if rho_ <= 0:
        raise ValidationError(f"decay condition fails: rho = {rho_:.3g} <= 0")
    if not 0 <= alpha < 1:
        raise ValidationError(f"alpha must lie in [0, 1), got {alpha}")
    z = params.tau * params.zeta
    val = _integrate(cone, lambda d: d @ z, cone.dim - 1 + alpha, params.tau, rho_, rtol)
    return complex(val) / math.sqrt(params.D)


def l2_norm(cone, params, rtol=1e-8):
    """``||w||_{L^2(S_h)}``; ``|w|^2 = exp(-2 tau xi . (x - x_c)) / D``."""
    rho_ = rho(cone, params.xi)
    if rho_ <= 0:
        raise ValidationError(f"decay condition fails: rho = {rho_:.3g} <= 0")
    val = _integrate(cone, lambda d: 2 * params.tau * (d @ params.xi) + 0j,
                     cone.dim - 1, params.tau, rho_, rtol)
    return math.sqrt(val.real / params.D)


def grad_l2_norm(cone, params, rtol=1e-8):
    """``||grad w||_{L^2(S_h)}``; ``|grad w|^2 = tau^2 |zeta|^2 |w|^2`` with ``|zeta|^2 = 2``."""
    return math.sqrt(2.0) * params.tau * l2_norm(cone, params, rtol)


def cap_l2_norm(cone, params, n=256):
    """``||w||_{L^2}`` over the spherical cap ``S_h ∩ ∂B_h`` (diagnostic)."""
    d, wd = _directions(cone, n)
    a = np.exp(-2 * params.tau * cone.h * (d @ params.xi))
    return math.sqrt(cone.h ** (cone.dim - 1) * float(wd @ a) / params.D)


# --------------------------------------------------------------------------
# decay study

def fit_slope(tau, values):
    """Least-squares slope of ``log values`` against ``log tau``."""
    return float(np.polyfit(np.log(tau), np.log(values), 1)[0])


def _log_ratio_spread(logs):
    return float(np.exp(np.max(logs) - np.min(logs)))


@dataclass
class DecayReport:
    dim: int
    rho: float
    h: float
    alpha: float
    tau: list
    abs_integral: list
    l2_norm: list
    grad_l2_norm: list
    weighted_integral: list
    cap_l2_norm: list
    slopes: dict = field(default_factory=dict)
    spreads: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path):
        cols = ["tau", "abs_integral", "l2_norm", "grad_l2_norm", "weighted_integral", "cap_l2_norm"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(getattr(self, c) for c in cols)):
                w.writerow([repr(float(x)) for x in row])
            w.writerow([])
            w.writerow(["quantity", "value"])
            for k, v in {**self.slopes, **self.spreads}.items():
                w.writerow([k, v if isinstance(v, str) else repr(float(v))])
            for k, v in self.flags.items():
                w.writerow([f"flag_{k}", v])


def decay_study(cone, params, tau_grid: Sequence[float], alpha=0.5, rtol=1e-8,
                bound_ratio=10.0, slope_tol=0.1):
    """Evaluate the decay quantities on ``tau_grid`` and fit their rates.

    Flags
    -----
    a_l2_bounded
        ``e^{rho h tau} ||w||_{L^2(S_h)}`` has max/min at most ``bound_ratio``.
    b_grad_bounded
        Same for ``e^{rho h tau} ||grad w|| / ((1 + tau)(1 + tau^{-d}))``
        with ``d = 2/3`` in 2D and ``2/5`` in 3D.
    c_integer_slope
        The ``|int w|`` log-log slope is within ``slope_tol`` of an integer;
        ``slopes["matches"]`` names which predicted exponent it equals.
    decreasing_<quantity>
        The quantity strictly decreases where ``h tau >= 5``.  In 2D
        ``||grad w|| = sqrt(2) tau ||w||`` tends to a constant, so that flag
        is expected to be False there.
    """
    tau = np.asarray(tau_grid, float)
    if tau.ndim != 1 or tau.size < 2 or np.any(np.diff(tau) <= 0):
        raise ValidationError("tau_grid must be strictly increasing with at least two values")
    if tau[-1] < 10 * tau[0]:
        raise ValidationError("tau_grid must span at least one decade")
    rho_ = rho(cone, params.xi)
    if rho_ <= 0:
        raise ValidationError(f"decay condition fails: rho = {rho_:.3g} <= 0")
    n, h = cone.dim, cone.h
    I, L2, G2, Wt, C2 = [], [], [], [], []
    for t in tau:
        p = params.with_tau(float(t))
        I.append(abs(cone_integral(cone, p, 0.0, rtol)))
        L2.append(l2_norm(cone, p, rtol))
        G2.append(grad_l2_norm(cone, p, rtol))
        Wt.append(abs(cone_integral(cone, p, alpha, rtol)))
        C2.append(cap_l2_norm(cone, p))
    I, L2, G2, Wt, C2 = map(np.array, (I, L2, G2, Wt, C2))
    d = 2 / 3 if n == 2 else 2 / 5
    spread_a = _log_ratio_spread(rho_ * h * tau + np.log(L2))
    spread_b = _log_ratio_spread(rho_ * h * tau + np.log(G2) - np.log((1 + tau) * (1 + tau ** -d)))
    spread_cap = _log_ratio_spread(rho_ * h * tau + np.log(C2))
    s_int = fit_slope(tau, I)
    nearest = int(round(s_int))
    matches = {-(n - 1): "tau^-(n-1)", -n: "tau^-n"}.get(nearest, "neither")
    tail = h * tau >= 5
    mono = {f"decreasing_{k}": bool(np.all(np.diff(q[tail]) < 0)) for k, q in
            (("abs_integral", I), ("l2_norm", L2), ("grad_l2_norm", G2), ("weighted_integral", Wt))}
    rep = DecayReport(
        dim=n, rho=rho_, h=h, alpha=alpha, tau=tau.tolist(), abs_integral=I.tolist(),
        l2_norm=L2.tolist(), grad_l2_norm=G2.tolist(), weighted_integral=Wt.tolist(),
        cap_l2_norm=C2.tolist(),
        slopes={"abs_integral": s_int, "l2_norm": fit_slope(tau, L2),
                "grad_l2_norm": fit_slope(tau, G2), "weighted_integral": fit_slope(tau, Wt),
                "predicted_bound_exponent": -(n - 1), "scaling_exponent": -n,
                "weighted_scaling_exponent": -(n + alpha)},
        spreads={"a_l2": spread_a, "b_grad": spread_b, "cap_l2": spread_cap},
        flags={"a_l2_bounded": bool(spread_a <= bound_ratio),
               "b_grad_bounded": bool(spread_b <= bound_ratio),
               "c_integer_slope": bool(abs(s_int - nearest) <= slope_tol),
               **mono},
    )
    rep.slopes["matches"] = matches
    if not rep.flags["a_l2_bounded"]:
        rep.notes.append(
            "||w||_{L2(S_h)} decays algebraically because |w| ~ 1 near the apex, so "
            "e^{rho h tau}||w|| grows; the exponential bound holds on the cap S_h ∩ ∂B_h "
            f"(spread {spread_cap:.3g}).")
    return rep


HARMONIC_TOL = 1e-4


def study_from_config(cfg, n_points=100, seed=0):
    """Decay study plus a harmonicity check driven by a CGO configuration.

    The harmonicity residual is the worst value over the tau grid at
    ``n_points`` seeded random points in the bounding box of ``S_h``.
    """
    cone = ConeSpec.from_dict(cfg)
    xi = cfg.get("xi")
    D = float(cfg.get("D", 1.0))
    tau = cfg["tau_grid"]
    if xi is None:
        params = CGOParams.aligned(cone, float(tau[0]), D)
    else:
        params = CGOParams(float(tau[0]), xi, cfg.get("xi_perp", _perp_basis(np.asarray(xi, float))[0]), D)
    rep = decay_study(cone, params, tau, alpha=float(cfg.get("alpha", 0.5)),
                      rtol=float(cfg.get("rtol", 1e-8)))
    rng = np.random.default_rng(seed)
    pts = cone.apex + rng.uniform(-cone.h, cone.h, size=(n_points, cone.dim))
    res = max(harmonicity_residual(params.with_tau(float(t)), cone.apex, pts) for t in tau)
    rep.spreads["harmonicity_residual"] = res
    rep.flags["harmonic"] = bool(res <= HARMONIC_TOL)
    return rep
