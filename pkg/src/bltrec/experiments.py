"""
End-to-end reconstruction runs driven by experiment configurations.

A run builds the inversion mesh and a uniformly refined data mesh,
synthesizes boundary data on the data mesh with the sharp source load, adds
noise, and inverts on the coarse mesh with the smoothed load, so that data
and model never share a discretization.
"""
from __future__ import annotations

import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import lm
from .data import NoisyData, add_noise, load_dataset, save_dataset
from .errors import BLTError, ValidationError
from .fem import DEFAULT_SMOOTHING, INVERSION_SMOOTHING, BoundaryDatum, ForwardContext, sharp_source_nodal
from .media import MediaMap
from .mesh import SensorSet, build_mesh, refine_uniform, sensor_points
from .sources import Domain, SourceField, pack_params, validate

log = logging.getLogger(__name__)

OUT_ROOT_ENV = "BLTREC_OUT_ROOT"
NOISE_FLOOR = 1e-6


@contextmanager
def stage(name):
    """Prefix errors raised inside the block with the pipeline stage."""
    try:
        yield
    except BLTError as e:
        if not getattr(e, "stage", None):
            e.stage = name
            e.args = (f"[{name}] {e.args[0] if e.args else ''}",) + tuple(e.args[1:])
        raise


def default_out_dir(name):
    return Path(os.environ.get(OUT_ROOT_ENV, "runs")) / name


@dataclass
class Setup:
    """Meshes, forward contexts and sources of one configuration."""

    cfg: dict
    omega: Domain
    media: MediaMap
    sensors: SensorSet
    g_minus: BoundaryDatum
    q_true: SourceField
    q0: SourceField
    inv_mesh: object
    data_mesh: object = None
    inv_ctx: ForwardContext = None
    data_ctx: ForwardContext = None
    timings: dict = field(default_factory=dict)

    def data_context(self):
        if self.data_ctx is None:
            t = time.perf_counter()
            self.data_ctx = ForwardContext(self.data_mesh, self.media, self.sensors, self.g_minus,
                                           smoothing=DEFAULT_SMOOTHING)
            self.timings["data_assembly"] = time.perf_counter() - t
        return self.data_ctx


def _check_source(q, omega, what):
    bad = validate(q, omega)
    if bad:
        raise ValidationError(f"{what} is inadmissible: " + "; ".join(bad), bad)


def prepare(cfg, need_data_mesh=True):
    """Build meshes and contexts for a validated configuration."""
    t0 = time.perf_counter()
    dom = cfg["domain"]
    dim, R, h = int(dom["dim"]), float(dom["R"]), float(dom["h"])
    omega = Domain(R, dim)
    with stage("config"):
        media = MediaMap.from_dict(cfg["media"], R)
        q_true = SourceField.from_dict(cfg["true_source"])
        q0 = SourceField.from_dict(cfg["initial_guess"])
        for q, what in ((q_true, "true source"), (q0, "initial guess")):
            if q.dim != dim:
                raise ValidationError(f"{what} is {q.dim}D but the domain is {dim}D")
            _check_source(q, omega, what)
        g = BoundaryDatum.from_dict(cfg.get("g_minus"))
        if g.kind == "coordinate" and g.axis >= dim:
            raise ValidationError(f"g_minus axis {g.axis} out of range for {dim}D")
        sensors = SensorSet(sensor_points(R, int(cfg["sensors"]["M"]), dim))
    with stage("mesh"):
        inv_mesh = build_mesh(dim, R, h, media.interfaces())
        data_mesh = None
        if need_data_mesh:
            data_mesh = inv_mesh
            for _ in range(int(dom.get("refine", 1))):
                data_mesh = refine_uniform(data_mesh)
    t1 = time.perf_counter()
    with stage("assembly"):
        inv_ctx = ForwardContext(inv_mesh, media, sensors, g, smoothing=INVERSION_SMOOTHING)
    s = Setup(cfg, omega, media, inv_ctx.sensors, g, q_true, q0, inv_mesh, data_mesh, inv_ctx)
    s.timings.update(mesh=t1 - t0, inversion_assembly=time.perf_counter() - t1)
    return s


def synthesize(setup):
    """Noisy data from the true source on the data mesh."""
    noise = setup.cfg["noise"]
    with stage("synthesis"):
        ctx = setup.data_context()
        t = time.perf_counter()
        clean = ctx(setup.q_true)
        setup.timings["synthesis"] = time.perf_counter() - t
        return add_noise(clean, float(noise["delta"]), int(noise["seed"]))


def lm_config(cfg):
    return lm.LMConfig(**cfg["lm"])


def er_grid(setup):
    h = float(setup.cfg["domain"]["h"])
    spacing = min(h / 4, 0.01) if setup.omega.dim == 2 else h / 4
    return lm.quadrature_grid(setup.omega, spacing)


@dataclass
class RunRecord:
    config: dict
    trace: lm.LMTrace
    final_source: SourceField
    final_e_r: float
    data: NoisyData
    timings: dict
    manifest: list = field(default_factory=list)
    setup: Setup = None

    def summary(self):
        s = self.trace.summary(self.config)
        s.update(final_source=self.final_source.to_dict(), timings=self.timings,
                 manifest=self.manifest, noise_norms=self.data.norms(),
                 e_r_history=[float(x) for x in self.trace.e_r])
        return s


def invert(setup, data, on_iteration=None):
    """Run LM from the configured initial guess."""
    fam = pack_params(setup.q0).family
    theta0 = pack_params(setup.q0).theta
    problem = lm.InverseProblem(setup.inv_ctx, fam, setup.omega)
    with stage("inversion"):
        t = time.perf_counter()
        trace = lm.run(theta0, lm_config(setup.cfg), data, problem, q_true=setup.q_true,
                       er_grid=er_grid(setup), callback=on_iteration)
        setup.timings["inversion"] = time.perf_counter() - t
    return trace, problem


def run_experiment(cfg, out_dir=None, figures=True, quiet=True):
    """Full pipeline: synthesize, add noise, invert, report.

    Parameters
    ----------
    cfg : dict
        Validated experiment configuration.
    out_dir : path, optional
        Output directory; defaults to ``cfg["output"]["dir"]`` or
        ``$BLTREC_OUT_ROOT/<name>``.  ``False`` skips writing files.

    Returns
    -------
    RunRecord
    """
    cfgmod.validate_config(cfg, source=cfg.get("name", "config"))
    t0 = time.perf_counter()
    data_file = cfg.get("data_file")
    setup = prepare(cfg, need_data_mesh=data_file is None)
    if data_file:
        with stage("data"):
            data, sens, _ = load_dataset(data_file)
            if not np.allclose(sens.points, setup.sensors.points, atol=1e-12):
                raise ValidationError(f"{data_file}: sensor layout does not match the configuration")
    else:
        data = synthesize(setup)

    def progress(i, theta):
        if not quiet:
            log.info("iteration %d: theta=%s", i, np.array2string(np.asarray(theta), precision=4))

    trace, problem = invert(setup, data, progress)
    final = problem.field(trace.final_theta)
    setup.timings["total"] = time.perf_counter() - t0
    rec = RunRecord(cfg, trace, final, float(trace.e_r[-1]), data, dict(setup.timings), setup=setup)
    if out_dir is not False:
        out = Path(out_dir or cfg.get("output", {}).get("dir") or default_out_dir(cfg["name"]))
        with stage("report"):
            write_outputs(rec, out, figures)
    return rec


def write_outputs(rec, out, figures=True):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    s = rec.setup
    files = {}
    cfgmod.save_config(rec.config, out / "config.json")
    files["config"] = "config.json"
    rec.trace.to_csv(out / "trace.csv")
    files["trace"] = "trace.csv"
    save_dataset(out / "data.txt", rec.data, s.sensors,
                 domain={"R": s.omega.radius, "dim": s.omega.dim}, extra={"name": rec.config["name"]})
    files["dataset"] = "data.txt"
    fitted = s.inv_ctx(rec.final_source)
    _write_measurements(out / "measurement.csv", s.sensors.points, rec.data, fitted)
    files["measurement"] = "measurement.csv"
    sol = s.inv_ctx.solution(rec.final_source)
    sol.to_vtk(out / "fields.vtk", {
        "q_true": sharp_source_nodal(s.inv_mesh, s.q_true),
        "q_reconstructed": sharp_source_nodal(s.inv_mesh, rec.final_source),
    })
    files["fields"] = "fields.vtk"
    if figures:
        from . import plotting

        files.update(plotting.run_figures(rec, out))
    rec.manifest = sorted(files.values()) + ["summary.json"]
    with open(out / "summary.json", "w") as fh:
        json.dump(rec.summary(), fh, indent=2)
    return files


def _write_measurements(path, points, data, fitted):
    import csv

    d = points.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sensor_index", *"xyz"[:d], "g_value", "g_clean", "g_fitted"])
        for i, (p, n, c, f) in enumerate(zip(points, data.noisy, data.clean, fitted)):
            w.writerow([i, *(repr(float(x)) for x in p), repr(float(n)), repr(float(c)), repr(float(f))])


def run_example(name, out_dir=None, seed=None, mesh_h=None, figures=True, quiet=True):
    """Run a built-in example (``ex6_1`` ... ``ex6_7``)."""
    cfg = cfgmod.with_overrides(cfgmod.builtin_config(name), seed=seed, mesh_h=mesh_h)
    return run_experiment(cfg, out_dir, figures, quiet)


def forward_run(cfg, out_dir=None):
    """Forward-only run of the true source on the data mesh."""
    setup = prepare(cfg)
    data = synthesize(setup)
    out = Path(out_dir or cfg.get("output", {}).get("dir") or default_out_dir(cfg["name"] + "_forward"))
    out.mkdir(parents=True, exist_ok=True)
    with stage("report"):
        ctx = setup.data_context()
        _write_measurements(out / "measurement.csv", setup.sensors.points, data, data.clean)
        ctx.solution(setup.q_true).to_vtk(out / "fields.vtk",
                                          {"q_true": sharp_source_nodal(setup.data_mesh, setup.q_true)})
        save_dataset(out / "data.txt", data, setup.sensors,
                     domain={"R": setup.omega.radius, "dim": setup.omega.dim}, extra={"name": cfg["name"]})
        cfgmod.save_config(cfg, out / "config.json")
    return data, out


# --------------------------------------------------------------------------
# distinguishability

def distinguishability_test(qA, qB, ctx):
    """Relative separation of the boundary data of two sources.

    Returns
    -------
    dict
        ``separation = ||F(qA) - F(qB)|| / max(||F(qA)||, ||F(qB)||)`` and
        whether it exceeds the numerical noise floor.
    """
    with stage("distinguishability"):
        for q, what in ((qA, "qA"), (qB, "qB")):
            _check_source(q, ctx.omega, what)
        a, b = ctx(qA), ctx(qB)
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    sep = float(np.linalg.norm(a - b) / den) if den > 0 else 0.0
    return {"separation": sep, "norm_a": float(np.linalg.norm(a)), "norm_b": float(np.linalg.norm(b)),
            "noise_floor": NOISE_FLOOR, "distinguishable": sep > NOISE_FLOOR}


__all__ = [
    "Setup", "RunRecord", "prepare", "synthesize", "invert", "run_experiment", "run_example",
    "forward_run", "distinguishability_test",
]
