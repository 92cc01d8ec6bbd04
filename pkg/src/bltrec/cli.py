"""
Command-line harness.

Subcommands: ``forward``, ``invert``, ``cgo-verify``, ``example`` and
``mesh-info``.  Exit status is 0 on success, 1 on validation errors (bad
flags, missing or invalid configuration) and 2 on numerical failures.

``BLTREC_THREADS`` caps BLAS/OpenMP threads; ``BLTREC_OUT_ROOT`` sets the
default output root.  numpy is imported only after the thread variables are
set, so this module must not import it at top level.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
THREADS_ENV = "BLTREC_THREADS"
_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; usage errors are validation errors here
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _apply_threads():
    n = os.environ.get(THREADS_ENV)
    if n:
        for var in _THREAD_VARS:
            os.environ[var] = n


def build_parser():
    p = _Parser(prog="bltrec", description="Bioluminescence tomography source reconstruction.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def common(sp, config=True, mesh=True):
        if config:
            sp.add_argument("--config", required=True, help="experiment configuration (JSON)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="noise seed override")
        if mesh:
            sp.add_argument("--mesh-h", type=float, help="inversion mesh size override")
        sp.add_argument("--quiet", action="store_true", help="suppress progress output")

    common(sub.add_parser("forward", help="synthesize boundary data for the true source"))
    common(sub.add_parser("invert", help="reconstruct the source with Levenberg-Marquardt"))
    common(sub.add_parser("cgo-verify", help="CGO decay study on a cone"), mesh=False)
    ex = sub.add_parser("example", help="run a built-in example")
    ex.add_argument("name", nargs="?", help="example name (see --list)")
    ex.add_argument("--list", action="store_true", help="list the built-in examples")
    common(ex, config=False)
    mi = sub.add_parser("mesh-info", help="report mesh statistics for a configuration")
    mi.add_argument("--config", required=True, help="experiment configuration (JSON)")
    mi.add_argument("--mesh-h", type=float, help="inversion mesh size override")
    mi.add_argument("--out", help="write mesh_info.json here")
    mi.add_argument("--quiet", action="store_true")
    return p


def _emit(rows):
    for k, v in rows:
        print(f"{k}\t{v}")


def _load(args, kind="experiment"):
    from . import config as C

    cfg = C.load_config(args.config, kind)
    if kind == "experiment":
        cfg = C.with_overrides(cfg, seed=getattr(args, "seed", None), mesh_h=getattr(args, "mesh_h", None))
    return cfg


def _report_run(rec, out):
    tr = rec.trace
    _emit([("name", rec.config["name"]), ("termination", tr.termination),
           ("iterations", tr.iterations), ("final_e_r", repr(rec.final_e_r)),
           ("final_residual_norm", repr(float(tr.residual_norm[-1]))),
           ("final_theta", ",".join(repr(float(x)) for x in tr.final_theta)),
           ("out", out)])
    if tr.termination in ("forward_failure", "invalid_step"):
        print(f"bltrec: run stopped early: {tr.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _out_dir(args, cfg, suffix=""):
    from .experiments import default_out_dir

    return args.out or cfg.get("output", {}).get("dir") or str(default_out_dir(cfg["name"] + suffix))


def cmd_forward(args):
    from .experiments import forward_run

    cfg = _load(args)
    data, out = forward_run(cfg, _out_dir(args, cfg, "_forward"))
    _emit([("name", cfg["name"]), ("sensors", data.clean.size),
           ("clean_norm", repr(float((data.clean ** 2).sum() ** 0.5))), ("out", out)])
    return EXIT_OK


def cmd_invert(args):
    from .experiments import run_experiment

    cfg = _load(args)
    out = _out_dir(args, cfg)
    rec = run_experiment(cfg, out, figures=True, quiet=args.quiet)
    return _report_run(rec, out)


def cmd_example(args):
    from . import config as C
    from .experiments import run_example

    if args.list:
        for name in C.list_examples():
            print(name)
        return EXIT_OK
    if not args.name:
        raise _UsageError("bltrec example: a name or --list is required")
    from .experiments import default_out_dir

    out = args.out or str(default_out_dir(args.name))
    rec = run_example(args.name, out, seed=args.seed, mesh_h=args.mesh_h, quiet=args.quiet)
    return _report_run(rec, out)


def cmd_cgo_verify(args):
    from pathlib import Path

    from . import cgo
    from .experiments import default_out_dir
    from .plotting import decay_figure

    cfg = _load(args, "cgo")
    out = Path(args.out or cfg.get("output", {}).get("dir") or default_out_dir(cfg.get("name", "cgo")))
    rep = cgo.study_from_config(cfg, seed=args.seed or 0)
    out.mkdir(parents=True, exist_ok=True)
    rep.to_json(out / "decay.json")
    rep.to_csv(out / "decay.csv")
    decay_figure(rep, out / "decay.png")
    rows = [("rho", repr(rep.rho)), ("slope_abs_integral", repr(rep.slopes["abs_integral"])),
            ("slope_matches", rep.slopes["matches"])]
    rows += [(f"spread_{k}", repr(v)) for k, v in rep.spreads.items()]
    rows += [(f"flag_{k}", v) for k, v in rep.flags.items()]
    rows.append(("out", str(out)))
    _emit(rows)
    for note in rep.notes:
        print(f"note: {note}", file=sys.stderr)
    return EXIT_OK


def cmd_mesh_info(args):
    import json
    from pathlib import Path

    from .media import MediaMap
    from .mesh import build_mesh, check_mesh, refine_uniform

    cfg = _load(args)
    dom = cfg["domain"]
    R, dim, h = float(dom["R"]), int(dom["dim"]), float(dom["h"])
    media = MediaMap.from_dict(cfg["media"], R)
    inv = build_mesh(dim, R, h, media.interfaces())
    meshes = {"inversion": inv}
    data = inv
    for _ in range(int(dom.get("refine", 1))):
        data = refine_uniform(data)
    meshes["data"] = data
    info = {}
    for label, m in meshes.items():
        s = m.summary()
        s["problems"] = check_mesh(m)
        info[label] = s
        _emit([(f"{label}.{k}", v) for k, v in s.items()])
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "mesh_info.json", "w") as fh:
            json.dump(info, fh, indent=2)
    return EXIT_OK


COMMANDS = {"forward": cmd_forward, "invert": cmd_invert, "example": cmd_example,
            "cgo-verify": cmd_cgo_verify, "mesh-info": cmd_mesh_info}


def main(argv=None):
    _apply_threads()
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("bltrec").setLevel(logging.WARNING if args.quiet else logging.INFO)
    from numpy.linalg import LinAlgError

    from .errors import BLTError, DatasetError, ValidationError

    try:
        return COMMANDS[args.command](args)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationError, DatasetError) as e:
        print(f"bltrec: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BLTError, ArithmeticError, LinAlgError) as e:
        print(f"bltrec: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"bltrec: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
