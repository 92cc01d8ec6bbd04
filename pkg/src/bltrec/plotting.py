"""Matplotlib figures for runs and decay studies (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sources import eval_source  # noqa: E402


def _grid2(R, n=300):
    ax = np.linspace(-R, R, n)
    X, Y = np.meshgrid(ax, ax)
    return X, Y, np.column_stack([X.ravel(), Y.ravel()])


def _outline(ax, q, pts, X, Y, **kw):
    Z = eval_source(q, pts).reshape(X.shape) != 0
    ax.contour(X, Y, Z.astype(float), levels=[0.5], **kw)


def reconstruction_figure(rec, path, snapshots=(0, 2, 4)):
    """Outlines of the true, initial and iterated sources (2D), or three
    coordinate-plane slices (3D)."""
    s = rec.setup
    R, dim = s.omega.radius, s.omega.dim
    from .sources import ParamVector, unpack_params

    fam = rec.final_source.family
    iterates = [unpack_params(ParamVector(rec.trace.theta[i], fam))
                for i in snapshots if i < len(rec.trace.theta)]
    if dim == 2:
        fig, ax = plt.subplots(figsize=(5.5, 5.5))
        X, Y, pts = _grid2(R)
        th = np.linspace(0, 2 * np.pi, 400)
        ax.plot(R * np.cos(th), R * np.sin(th), color="0.6", lw=0.8)
        _outline(ax, s.q_true, pts, X, Y, colors="k", linewidths=2.0)
        cmap = plt.get_cmap("viridis")
        for k, q in enumerate(iterates):
            _outline(ax, q, pts, X, Y, colors=[cmap(k / max(1, len(iterates)))], linewidths=0.8,
                     linestyles="dashed")
        _outline(ax, rec.final_source, pts, X, Y, colors="tab:red", linewidths=1.5)
        ax.set_aspect("equal")
        ax.set_title(f"{rec.config['name']}: true (black), final (red), e_r={rec.final_e_r:.3f}")
    else:
        fig, axes = plt.subplots(1, 3, figsize=(13, 4.5))
        n = 200
        ax1 = np.linspace(-R, R, n)
        A, B = np.meshgrid(ax1, ax1)
        for k, ax in enumerate(axes):
            pts = np.zeros((n * n, 3))
            free = [j for j in range(3) if j != k]
            pts[:, free[0]], pts[:, free[1]] = A.ravel(), B.ravel()
            for q, col, lw in ((s.q_true, "k", 2.0), (rec.final_source, "tab:red", 1.5)):
                Z = (eval_source(q, pts).reshape(A.shape) != 0).astype(float)
                if Z.any() and not Z.all():
                    ax.contour(A, B, Z, levels=[0.5], colors=col, linewidths=lw)
            ax.set_aspect("equal")
            ax.set_xlim(-R, R)
            ax.set_ylim(-R, R)
            ax.set_title(f"slice {'xyz'[k]}=0")
        fig.suptitle(f"{rec.config['name']}: true (black), final (red), e_r={rec.final_e_r:.3f}")
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def history_figure(trace, path, title=""):
    fig, ax = plt.subplots(1, 2, figsize=(10, 4))
    it = np.arange(len(trace.theta))
    ax[0].semilogy(it, trace.e_r, "o-")
    ax[0].set_xlabel("iteration")
    ax[0].set_ylabel("relative error e_r")
    ax[1].semilogy(it, trace.residual_norm, "s-", label="residual norm")
    E = np.array(trace.E, float)
    ax[1].semilogy(it[1:], E[1:], "^-", label="E_i")
    ax[1].set_xlabel("iteration")
    ax[1].legend()
    fig.suptitle(title)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def measurement_figure(points, noisy, fitted, path, title=""):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(noisy, ".", ms=3, label="noisy data")
    ax.plot(fitted, "-", lw=1, label="fitted")
    ax.set_xlabel("sensor index")
    ax.set_ylabel("g")
    ax.legend()
    ax.set_title(title)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)


def run_figures(rec, out):
    """Write the standard run figures; returns a manifest fragment."""
    out = Path(out)
    reconstruction_figure(rec, out / "reconstruction.png")
    history_figure(rec.trace, out / "history.png", rec.config["name"])
    fitted = rec.setup.inv_ctx(rec.final_source)
    measurement_figure(rec.setup.sensors.points, rec.data.noisy, fitted, out / "measurement.png",
                       rec.config["name"])
    return {"fig_reconstruction": "reconstruction.png", "fig_history": "history.png",
            "fig_measurement": "measurement.png"}


def decay_figure(report, path):
    tau = np.asarray(report.tau)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for key, mk in (("abs_integral", "o"), ("l2_norm", "s"), ("grad_l2_norm", "^"),
                    ("weighted_integral", "d"), ("cap_l2_norm", "x")):
        ax.loglog(tau, getattr(report, key), mk + "-", label=key)
    n = report.dim
    ref = report.abs_integral[0] * (tau / tau[0]) ** (-n)
    ax.loglog(tau, ref, "k:", label=f"tau^-{n}")
    ax.set_xlabel("tau")
    ax.legend(fontsize=8)
    ax.set_title(f"CGO decay, {n}D, rho={report.rho:.3f}")
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
