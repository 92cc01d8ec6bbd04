"""
Levenberg-Marquardt shape reconstruction with a scheduled damping.

Iteration ``i`` computes the residual ``F_i = Phi_delta - F(theta_i)``, a
forward-difference Jacobian ``G`` and the step::

    (G^T G + lambda_i I) dtheta = G^T F_i,   lambda_i = 1 / (1 + exp(beta (i + i0)))

and stops once ``E_i = ||theta_i - theta_{i-1}||_2 <= stop_tol`` or after
``max_iter`` steps.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import BLTError, DomainError, JacobianError, ValidationError
from .sources import DIST_MIN, ParamVector, eval_source, unpack_params, validate


@dataclass(frozen=True)
class LMConfig:
    """Damping schedule, stopping rule, difference steps and repair policy."""

    beta: float
    i0: int = 0
    max_iter: int = 20
    stop_tol: float = 1e-2
    fd_geom: float = 1e-3
    fd_rel: float = 1e-3
    max_halvings: int = 10
    dist_min: float = DIST_MIN

    def __post_init__(self):
        bad = []
        if not self.beta > 0:
            bad.append(f"beta must be > 0, got {self.beta}")
        if int(self.max_iter) < 1:
            bad.append(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.stop_tol > 0:
            bad.append(f"stop_tol must be > 0, got {self.stop_tol}")
        if not (self.fd_geom > 0 and self.fd_rel > 0):
            bad.append("finite-difference steps must be > 0")
        if bad:
            raise ValidationError("; ".join(bad), bad)

    def to_dict(self):
        return asdict(self)


def lambda_schedule(i, beta, i0=0):
    """``1 / (1 + exp(beta (i + i0)))``, evaluated without overflow."""
    if not beta > 0:
        raise ValidationError(f"beta must be > 0, got {beta}")
    return float(expit(-beta * (i + i0)))


def fd_steps(theta, family, cfg):
    """Absolute steps for geometry, ``fd_rel * max(1, |phi|)`` for intensities."""
    theta = np.asarray(theta, float)
    return np.where(family.intensity_mask(), cfg.fd_rel * np.maximum(1.0, np.abs(theta)), cfg.fd_geom)


class InverseProblem:
    """Forward map over a parameter family with admissibility checks.

    Parameters
    ----------
    forward : callable
        Maps a :class:`SourceField` to a measurement vector (e.g. a
        :class:`~bltrec.fem.ForwardContext`).
    family : Family
    omega : Domain
    dist_min : float
        Containment margin used for admissibility.
    """

    def __init__(self, forward, family, omega, dist_min=DIST_MIN):
        self.forward = forward
        self.family = family
        self.omega = omega
        self.dist_min = dist_min
        self.n_evals = 0

    def field(self, theta):
        q = unpack_params(ParamVector(theta, self.family))
        bad = validate(q, self.omega, self.dist_min)
        if bad:
            raise ValidationError("inadmissible parameters: " + "; ".join(bad), bad)
        return q

    def admissible(self, theta):
        try:
            self.field(theta)
        except ValidationError:
            return False
        return True

    def predict(self, theta):
        q = self.field(theta)
        self.n_evals += 1
        return np.asarray(self.forward(q), float)


def _data_vector(data):
    return np.asarray(getattr(data, "noisy", data), float)


def residual(theta, data, problem):
    """``Phi_delta - F(q(theta))``; raises ValidationError for inadmissible theta."""
    return _data_vector(data) - problem.predict(theta)


def fd_jacobian(theta, problem, cfg, base=None, free=None):
    """Forward-difference Jacobian of ``F``, one column per free parameter.

    A step that leaves the admissible set is taken backwards instead.

    Raises
    ------
    JacobianError
        When neither direction is admissible for some parameter.
    """
    theta = np.asarray(theta, float)
    base = problem.predict(theta) if base is None else base
    steps = fd_steps(theta, problem.family, cfg)
    labels = problem.family.labels()
    idx = np.flatnonzero(np.ones(theta.size, bool) if free is None else free)
    G = np.empty((base.size, idx.size))
    for col, j in enumerate(idx):
        h = steps[j]
        tp = theta.copy()
        tp[j] += h
        if problem.admissible(tp):
            G[:, col] = (problem.predict(tp) - base) / h
            continue
        tm = theta.copy()
        tm[j] -= h
        if problem.admissible(tm):
            G[:, col] = (base - problem.predict(tm)) / h
            continue
        raise JacobianError(f"no admissible difference step for parameter {labels[j]!r}")
    return G


def lm_step(G, F, lam):
    """Solve ``(G^T G + lam I) dtheta = G^T F``."""
    if not lam > 0:
        raise ValidationError(f"lambda must be > 0, got {lam}")
    G = np.atleast_2d(np.asarray(G, float))
    F = np.asarray(F, float)
    N = G.T @ G + lam * np.eye(G.shape[1])
    return np.linalg.solve(N, G.T @ F)


# --------------------------------------------------------------------------
# relative error

def quadrature_grid(omega, spacing):
    """Cell centres of a regular grid restricted to ``B_R``."""
    R = omega.radius
    n = int(np.ceil(2 * R / spacing))
    ax = -R + spacing * (np.arange(n) + 0.5)
    pts = np.stack(np.meshgrid(*([ax] * omega.dim), indexing="ij"), axis=-1).reshape(-1, omega.dim)
    return pts[np.linalg.norm(pts, axis=1) < R]


def relative_error(q_tilde, q_dagger, omega=None, grid=None, spacing=0.01):
    """``||q_tilde - q_dagger||_L2 / ||q_dagger||_L2`` by the midpoint rule on a grid."""
    if grid is None:
        grid = quadrature_grid(omega, spacing)
    ref = eval_source(q_dagger, grid)
    den = np.sqrt(np.sum(ref * ref))
    if den == 0:
        raise DomainError("reference source is identically zero on the grid")
    diff = (0.0 if q_tilde is None else eval_source(q_tilde, grid)) - ref
    return float(np.sqrt(np.sum(diff * diff)) / den)


# --------------------------------------------------------------------------
# driver

@dataclass
class LMTrace:
    labels: list
    theta: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    residual_norm: list = field(default_factory=list)
    E: list = field(default_factory=list)
    e_r: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    termination: str = ""
    message: str = ""

    @property
    def iterations(self):
        """Number of completed LM steps."""
        return max(0, len(self.theta) - 1)

    @property
    def final_theta(self):
        return np.asarray(self.theta[-1])

    def append(self, theta, lam, rnorm, E, er, t):
        self.theta.append(np.array(theta, float))
        self.lam.append(lam)
        self.residual_norm.append(rnorm)
        self.E.append(E)
        self.e_r.append(er)
        self.wall_time.append(t)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "lambda", "residual_norm", "E_i", "e_r"] + list(self.labels))
            for i in range(len(self.theta)):
                w.writerow([i] + [repr(float(x)) for x in
                                  (self.lam[i], self.residual_norm[i], self.E[i], self.e_r[i])]
                           + [repr(float(x)) for x in self.theta[i]])

    def summary(self, config=None):
        return {
            "config": config or {},
            "final_theta": [float(x) for x in self.final_theta],
            "labels": list(self.labels),
            "final_e_r": float(self.e_r[-1]),
            "final_residual_norm": float(self.residual_norm[-1]),
            "iterations": self.iterations,
            "termination": self.termination,
            "message": self.message,
        }

    def write_summary(self, path, config=None):
        with open(path, "w") as fh:
            json.dump(self.summary(config), fh, indent=2)


def run(theta0, cfg, data, problem, q_true=None, er_grid=None, free=None, callback=None):
    """Run scheduled LM from ``theta0``.

    Parameters
    ----------
    theta0 : array_like
    cfg : LMConfig
    data : NoisyData or array
        Measured ``Phi_delta``.
    problem : InverseProblem
    q_true : SourceField, optional
        Enables the ``e_r`` column.
    er_grid : ndarray, optional
        Quadrature points for ``e_r`` (see :func:`quadrature_grid`).
    free : bool array, optional
        Parameters to optimize; the rest stay at ``theta0``.
    callback : callable, optional
        Called as ``callback(i, theta)`` after each recorded iterate.

    Returns
    -------
    LMTrace
        ``termination`` is one of ``converged``, ``max_iter``,
        ``invalid_step`` or ``forward_failure``.
    """
    phi_delta = _data_vector(data)
    theta = np.array(theta0, float)
    free = np.ones(theta.size, bool) if free is None else np.asarray(free, bool)
    trace = LMTrace(problem.family.labels())
    t0 = time.perf_counter()
    if q_true is not None and er_grid is None:
        er_grid = quadrature_grid(problem.omega, 0.01 if problem.omega.dim == 2 else 0.05)

    def e_r(th):
        if q_true is None:
            return float("nan")
        return relative_error(problem.field(th), q_true, grid=er_grid)

    try:
        base = problem.predict(theta)
    except ValidationError as e:
        raise ValidationError(f"initial parameters are inadmissible: {e}", e.violations) from None
    prev = None
    i = 0
    while True:
        F_i = phi_delta - base
        lam = lambda_schedule(i, cfg.beta, cfg.i0)
        E = float("nan") if prev is None else float(np.linalg.norm(theta - prev))
        trace.append(theta, lam, float(np.linalg.norm(F_i)), E, e_r(theta), time.perf_counter() - t0)
        if callback is not None:
            callback(i, theta)
        if prev is not None and E <= cfg.stop_tol:
            trace.termination = "converged"
            break
        if i >= cfg.max_iter:
            trace.termination = "max_iter"
            break
        try:
            G = fd_jacobian(theta, problem, cfg, base=base, free=free)
            step = np.zeros_like(theta)
            step[free] = lm_step(G, F_i, lam)
            for _ in range(cfg.max_halvings + 1):
                cand = theta + step
                if problem.admissible(cand):
                    break
                step *= 0.5
            else:
                trace.termination = "invalid_step"
                trace.message = f"no admissible step after {cfg.max_halvings} halvings at iteration {i}"
                break
            new_base = problem.predict(cand)
        except JacobianError as e:
            trace.termination = "invalid_step"
            trace.message = f"iteration {i}: {e}"
            break
        except BLTError as e:
            trace.termination = "forward_failure"
            trace.message = f"iteration {i}: {type(e).__name__}: {e}"
            break
        prev, theta, base = theta, cand, new_base
        i += 1
    return trace


def summary_json(trace, config=None):
    return json.dumps(trace.summary(config), indent=2)


__all__ = [
    "LMConfig", "LMTrace", "InverseProblem", "lambda_schedule", "fd_steps", "residual",
    "fd_jacobian", "lm_step", "run", "relative_error", "quadrature_grid",
]
