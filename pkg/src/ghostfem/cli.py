"""Command line interface.

    ghostfem run <config> [-o DIR]
    ghostfem converge <config> --levels K [-o DIR]
    ghostfem bench turek|cavity|flower|bubble [-o DIR] [--t-end T] [--nx N]
    ghostfem extrapolate-demo disk|ellipse|flower [--nx N] [-o DIR]
    ghostfem mesh-info <config>

Exit status: 0 on success, 2 for invalid input, 3 for numerical failures.
``GHOSTFEM_WORKERS`` sets the number of processes of a convergence sweep.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import ConfigError, GhostFEMError, NumericalError

log = logging.getLogger("ghostfem")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

BENCHES = {"turek": "turek_disk", "cavity": "driven_cavity", "flower": "rotating_flower",
           "bubble": "oscillating_bubble", "ellipsoidal-bubble": "ellipsoidal_bubble"}


def workers_from_env():
    raw = os.environ.get("GHOSTFEM_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", "GHOSTFEM_WORKERS") from None
    if n < 1:
        raise ConfigError("must be at least 1", "GHOSTFEM_WORKERS")
    return n


def manifest_data(cfg, result=None, extra=None):
    """Run metadata: the resolved configuration and every numerical knob."""
    import scipy

    from .config import resolve_dt
    from .timestepping import EPS_STAB, make_tableau

    tab = make_tableau(cfg["time.order"])
    data = {
        "ghostfem_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config": cfg.values,
        "defaults_used": cfg.defaults(),
        "resolved": {
            "h": cfg.h,
            "dt": resolve_dt(cfg),
            "nu": cfg.nu,
            "delta_snap": cfg["grid.delta_snap"],
            "eps_stabilization": EPS_STAB,
            "tableau": tab.as_dict(),
            "boundary_data": cfg["physics.sbm"],
            "penalty_gamma": cfg["penalty.gamma"],
            "penalty_override": cfg["penalty.lambda"],
            "extension": {k: cfg[f"extrapolation.{k}"] for k in
                          ("band", "dtau", "tol", "solver", "derivatives", "supg")},
            "lu_ordering": "MMD_AT_PLUS_A",
        },
    }
    if result is not None:
        lam = result.penalties
        data["penalty_lambda"] = {"first": lam[0] if lam else None, "min": min(lam) if lam else None,
                                  "max": max(lam) if lam else None, "snapshots": len(lam)}
        data["steps"] = len(result.steps)
        data["final_time"] = result.state.t
        data["wall_seconds"] = result.wall_seconds
        data["checks"] = result.checks
        if result.report is not None:
            data["errors"] = result.report.as_dict()
        data["mesh"] = result.state.mesh.summary()
    if extra:
        data.update(extra)
    return data


def write_outputs(result, cfg, directory):
    from . import io
    from .timestepping import StepInfo

    formats = cfg["output.formats"]
    if "csv" in formats:
        if result.forces is not None:
            io.write_series_csv(result.forces, os.path.join(directory, "series.csv"))
        elif result.errors is not None:
            io.write_csv(os.path.join(directory, "series.csv"), ("t", "L2_error", "H1_error"),
                         result.errors.per_step)
        else:
            io.write_csv(os.path.join(directory, "series.csv"), ("t", "kinetic_energy"), result.energy)
        io.write_csv(os.path.join(directory, "steps.csv"), StepInfo.CSV_HEADER,
                     [s.csv_row() for s in result.steps])
        if result.report is not None:
            r = result.report
            nan = float("nan")
            io.write_errors_csv([r], {"total_L2": nan, "total_H1": nan, "final_L2": nan,
                                      "final_H1": nan}, os.path.join(directory, "errors.csv"))
    if "vtk" in formats:
        for k, snap in enumerate(result.snapshots):
            io.write_field_vtk(os.path.join(directory, f"field_{k:03d}.vtk"), snap.mesh, snap.u, snap.p)
    io.write_manifest(os.path.join(directory, "manifest.json"), manifest_data(cfg, result))


def _progress(every):
    t0 = time.perf_counter()

    def cb(k, n, info):
        if k == n or k % every == 0:
            log.info("step %d/%d t=%.4f |u|=%.4e div=%.1e (%.0f s)", k, n, info.t, info.u_norm,
                     info.divergence_residual, time.perf_counter() - t0)
    return cb


def cmd_run(args, cfg=None):
    from .benchmarks import run_scenario
    from .config import load_config
    from .io import output_directory

    cfg = cfg or load_config(args.config)
    directory = args.output or cfg["output.directory"]
    with output_directory(directory):
        result = run_scenario(cfg, progress=_progress(args.log_every))
        write_outputs(result, cfg, directory)
    summary = {"scenario": cfg.name, "output": directory, "steps": len(result.steps),
               "checks": result.checks}
    if result.report is not None:
        summary["errors"] = result.report.as_dict()
    print(json.dumps(_plain(summary), indent=2))
    if not result.checks.get("finite", True):
        raise NumericalError("the solution contains non-finite values")
    return EXIT_OK


def cmd_converge(args):
    from . import io
    from .benchmarks import converge
    from .config import load_config

    cfg = load_config(args.config)
    directory = args.output or cfg["output.directory"]
    with io.output_directory(directory):
        reports, orders = converge(cfg, args.levels, workers=workers_from_env(),
                                   progress=lambda r: log.info("h=%.4g L2=%.3e H1=%.3e", r.h,
                                                               r.total_L2, r.total_H1))
        io.write_errors_csv(reports, orders, os.path.join(directory, "errors.csv"))
        io.emit_convergence_plot(reports, os.path.join(directory, "convergence.svg"), orders,
                                 title=f"{cfg.name}, {cfg['geometry.shape']}, order {cfg['time.order']}")
        io.write_manifest(os.path.join(directory, "manifest.json"),
                          manifest_data(cfg, extra={"levels": [r.as_dict() for r in reports],
                                                    "observed_orders": orders}))
    print(json.dumps(_plain({"levels": [r.as_dict() for r in reports], "observed_orders": orders}),
                     indent=2))
    return EXIT_OK


def cmd_bench(args):
    from .config import scenario_config

    changes = {}
    if args.t_end is not None:
        changes["time__t_end"] = args.t_end
        changes["output__snapshot_times"] = [args.t_end]
    if args.nx is not None:
        cfg0 = scenario_config(BENCHES[args.name])
        ratio = cfg0["grid.ny"] / cfg0["grid.nx"]
        changes["grid__nx"] = args.nx
        changes["grid__ny"] = int(round(args.nx * ratio))
    if args.re is not None:
        changes["physics__re"] = args.re
    cfg = scenario_config(BENCHES[args.name], **changes)
    return cmd_run(args, cfg)


def cmd_extrapolate_demo(args):
    from . import io
    from .extrapolation import build_band, extrapolate_quadratic
    from .geometry import LevelSetField
    from .mesh import CartesianGrid, MeshSnapshot

    grid = CartesianGrid(-1.0, -1.0, 2.0, 2.0, args.nx, args.nx)
    mesh = MeshSnapshot(grid, LevelSetField(args.shape))
    band = build_band(mesh)
    X, Y = grid.v_coords()
    x, y = X.ravel(), Y.ravel()
    exact = 1.0 + 2.0 * x + 3.0 * y ** 2
    before = np.where(band.known, exact, 0.0)
    after = extrapolate_quadratic(before, band, mesh)
    err = np.abs(after - exact)[band.band]
    directory = args.output or f"runs/extrapolate_{args.shape}"
    with io.output_directory(directory):
        fields = {"before": before, "after": after, "exact": exact,
                  "known": band.known.astype(float), "band": band.band.astype(float)}
        io.write_lattice_vtk(os.path.join(directory, "before.vtk"), grid,
                             {"field": before, "known": band.known.astype(float)})
        io.write_lattice_vtk(os.path.join(directory, "after.vtk"), grid, fields)
        summary = {"shape": args.shape, "nx": args.nx, "band_nodes": band.n_band,
                   "max_error": float(err.max()) if err.size else 0.0, "field": "1 + 2x + 3y^2"}
        io.write_manifest(os.path.join(directory, "manifest.json"), summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_mesh_info(args):
    from .benchmarks import build_scenario
    from .config import load_config
    from .fem import estimate_penalty
    from .mesh import MeshSnapshot

    cfg = load_config(args.config)
    sc = build_scenario(cfg)
    mesh = MeshSnapshot(sc.grid, sc.ls, 0.0, sc.delta_snap)
    info = mesh.summary()
    if args.penalty:
        pe = estimate_penalty(mesh, sc.gamma, sc.bc.wall_kinds)
        info["penalty_C"] = pe.C
        info["penalty_lambda"] = pe.lam
    print(json.dumps(_plain(info), indent=2))
    return EXIT_OK


def _plain(v):
    from .io import _jsonable
    return _jsonable(v)


def build_parser():
    p = argparse.ArgumentParser(prog="ghostfem", description="Unfitted Q2/Q1 Navier-Stokes solver")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the scenario of a configuration file")
    r.add_argument("config")
    r.add_argument("-o", "--output")
    r.add_argument("--log-every", type=int, default=50)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("converge", help="mesh refinement study of a manufactured-solution run")
    c.add_argument("config")
    c.add_argument("--levels", type=int, default=3)
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_converge)

    b = sub.add_parser("bench", help="flow benchmark with its default settings")
    b.add_argument("name", choices=sorted(BENCHES))
    b.add_argument("-o", "--output")
    b.add_argument("--t-end", type=float)
    b.add_argument("--nx", type=int)
    b.add_argument("--re", type=float)
    b.add_argument("--log-every", type=int, default=50)
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("extrapolate-demo", help="quadratic extension of a polynomial across a boundary")
    e.add_argument("shape", choices=("disk", "ellipse", "flower"))
    e.add_argument("--nx", type=int, default=40)
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_extrapolate_demo)

    m = sub.add_parser("mesh-info", help="active-mesh statistics at t = 0")
    m.add_argument("config")
    m.add_argument("--penalty", action="store_true", help="also calibrate the penalty")
    m.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GhostFEMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
