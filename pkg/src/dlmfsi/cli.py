"""Command-line entry point.

    dlmfsi solve-static     --config F
    dlmfsi simulate         --config F
    dlmfsi mms-convergence  --config F [--levels k]
    dlmfsi infsup-scan      --config F [--ratios list]

Exit status: 0 success, 2 a checked property failed, 1 any other error.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__, io
from .assembly import ModelParams, pressure_mean_vector
from .config import SCHEMA, load_config
from .errors import DLMError, EnergyViolation, MMSInconsistent
from .fem import FEFunction, interpolate
from .mesh import (build_rect_fluid_mesh, build_solid_curve_mesh, build_solid_disk_mesh,
                   build_solid_square_mesh, circle_curve_points)
from .saddle import FSIDiscretization
from .timestepper import PhysicalParams, initial_state, run, step, write_energy_log

log = logging.getLogger("dlmfsi")

EXIT_OK, EXIT_ERROR, EXIT_ASSERT = 0, 1, 2


def build_solid_mesh(cfg):
    kind = cfg["solid.kind"]
    if kind == "disk":
        return build_solid_disk_mesh(cfg["solid.center"], cfg["solid.radius"], cfg["solid.refine"])
    if kind == "curve":
        pts = circle_curve_points(cfg["solid.center"], cfg["solid.radius"], cfg["solid.segments"])
        return build_solid_curve_mesh(pts, closed=True)
    return build_solid_square_mesh(cfg["solid.n"], cfg["solid.bounds"])


def build_discretization(cfg):
    fluid = build_rect_fluid_mesh(cfg["fluid.nx"], cfg["fluid.ny"], cfg["fluid.bounds"])
    return FSIDiscretization(fluid, build_solid_mesh(cfg), variant=cfg["scheme.coupling"])


def initial_data(cfg, disc):
    """Fluid at rest; solid stretched about solid.center by initial.stretch."""
    c = np.asarray(cfg["solid.center"], float)
    A = np.diag(cfg["initial.stretch"])
    X0 = interpolate(disc.S, lambda s: c + (s - c) @ A.T)
    return FEFunction(disc.V), X0


def physical_params(cfg):
    return PhysicalParams(cfg["physics.rho_f"], cfg["physics.rho_s"], cfg["physics.nu"],
                          cfg["physics.kappa"], cfg["scheme.dt"])


def write_manifest(cfg, out_dir, outputs, status):
    lines = {
        "code.version": __version__,
        "config.hash": cfg.digest(),
        "mode": cfg.mode,
        "status": status,
        "outputs": ", ".join(sorted(outputs)),
    }
    for k in SCHEMA:
        if k.startswith("tol."):
            lines[k] = repr(float(cfg[k]))
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        fh.writelines(f"{k} = {v}\n" for k, v in lines.items())
    with open(os.path.join(out_dir, "config.txt"), "w") as fh:
        fh.write(cfg.serialize())


def cmd_simulate(cfg, out):
    disc = build_discretization(cfg)
    u0, X0 = initial_data(cfg, disc)
    phys = physical_params(cfg)
    rows = []
    status = EXIT_OK
    try:
        res = run(disc, phys, u0, X0, cfg["scheme.n_steps"], convection=cfg["scheme.convection"],
                  audit=cfg["output.audit"], tol_energy=cfg["tol.energy"], out_dir=out,
                  vtk_cadence=cfg["output.cadence"], on_step=lambda state, row: rows.append(row))
        if res.n_violations:
            log.error("energy inequality violated at %d steps", res.n_violations)
            status = EXIT_ASSERT
        log.info("E0 = %.6e, final total = %.6e, factorizations = %d", res.E0,
                 rows[-1]["total"] if rows else res.E0, res.n_factorizations)
    except EnergyViolation as exc:
        log.error("%s", exc)
        status = EXIT_ASSERT
    write_energy_log(os.path.join(out, "energy.csv"), rows)
    written = sorted(f for f in os.listdir(out) if f.endswith((".vtk", ".npz")))
    return status, ["energy.csv"] + written


def cmd_solve_static(cfg, out):
    """One stationary solve: the first time step from the configured initial state."""
    disc = build_discretization(cfg)
    u0, X0 = initial_data(cfg, disc)
    phys = physical_params(cfg)
    state = initial_state(disc, u0, X0, phys)
    new, info = step(disc, state, phys, convection=cfg["scheme.convection"])
    io.write_fluid_vtk(os.path.join(out, "static_fluid.vtk"), new.u, new.p)
    io.write_solid_vtk(os.path.join(out, "static_solid.vtk"), new.X, new.lam)
    mean_p = float(pressure_mean_vector(disc.Q) @ new.p.coefficients)
    rows = [["relative_residual", info.relative_residual], ["pressure_mean", mean_p]]
    io.write_csv(os.path.join(out, "residuals.csv"), ["quantity", "value"], rows)
    ok = info.relative_residual <= cfg["tol.residual"] and abs(mean_p) <= cfg["tol.residual"]
    return (EXIT_OK if ok else EXIT_ASSERT), ["static_fluid.vtk", "static_solid.vtk", "residuals.csv"]


def cmd_mms(cfg, out):
    from .verification import COMPONENTS, convergence_study, mms_case, self_check

    params = ModelParams(cfg["mms.alpha"], cfg["mms.beta"], cfg["mms.gamma"], cfg["mms.nu"])
    case = mms_case(params)
    try:
        res = self_check(case, tol=cfg["tol.mms"])
    except MMSInconsistent as exc:
        log.error("%s", exc)
        return EXIT_ASSERT, []
    log.info("manufactured data weak residuals: %s", res)
    rep = convergence_study(case, cfg["mms.levels"], cfg["mms.ratio"])
    io.write_csv(os.path.join(out, "convergence.csv"), ("h_x", "h_s") + COMPONENTS, rep.rows())
    io.write_csv(os.path.join(out, "slopes.csv"), ("norm", "slope"),
                 [[c, rep.slopes[c]] for c in COMPONENTS])
    checked = ("u_h1", "p_l2", "X_h1", "lam_dual")
    ok = rep.slopes["combined"] >= cfg["tol.slope"] and all(rep.monotone(c) for c in checked)
    if not ok:
        log.error("convergence check failed: combined slope %.3f, monotone %s", rep.slopes["combined"],
                  {c: rep.monotone(c) for c in checked})
    return (EXIT_OK if ok else EXIT_ASSERT), ["convergence.csv", "slopes.csv"]


def cmd_infsup(cfg, out):
    from .verification import INFSUP_HEADER, thick_infsup_levels, thin_ratio_sweep

    kind = cfg["solid.kind"]
    if kind == "curve":
        length = 2 * np.pi * cfg["solid.radius"]
        rows = thin_ratio_sweep(cfg["infsup.ratios"], cfg["solid.segments"], length=length,
                                center=cfg["solid.center"])
        betas = [r[3] for r in rows]
        order = np.argsort([r[2] for r in rows])
        ok = bool(np.all(np.diff(np.asarray(betas)[order]) <= 0))
    elif kind == "square":
        rows = thick_infsup_levels(cfg["infsup.levels"], cfg["infsup.ratios"][0], cfg["scheme.coupling"],
                                   bounds=cfg["solid.bounds"])
        betas = [r[3] for r in rows]
        ok = max(betas) <= cfg["tol.infsup_factor"] * min(betas)
    else:
        log.error("infsup-scan needs solid.kind = square (thick) or curve (thin)")
        return EXIT_ERROR, []
    io.write_csv(os.path.join(out, "infsup.csv"), INFSUP_HEADER, rows)
    if not ok:
        log.error("inf-sup check failed: %s", betas)
    return (EXIT_OK if ok else EXIT_ASSERT), ["infsup.csv"]


COMMANDS = {
    "solve-static": cmd_solve_static,
    "simulate": cmd_simulate,
    "mms-convergence": cmd_mms,
    "infsup-scan": cmd_infsup,
}


def make_parser():
    p = argparse.ArgumentParser(prog="dlmfsi", description="Fictitious-domain FSI solver")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="dotted-key config file")
        s.add_argument("--output", help="output directory (overrides output.dir)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "mms-convergence":
            s.add_argument("--levels", type=int, help="number of fluid grids, doubling from the first")
        if name == "infsup-scan":
            s.add_argument("--ratios", help="comma-separated h_x/h_s ratios")
    return p


def _overrides(args):
    o = {}
    if args.output:
        o["output.dir"] = args.output
    if getattr(args, "ratios", None):
        try:
            o["infsup.ratios"] = tuple(float(t) for t in args.ratios.split(",") if t.strip())
        except ValueError:
            raise DLMError(f"bad --ratios value {args.ratios!r}") from None
    return o


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _overrides(args), defaults={"mode": args.command})
        if cfg.mode != args.command:
            raise DLMError(f"config mode {cfg.mode!r} does not match subcommand {args.command!r}")
        if getattr(args, "levels", None) is not None:
            if args.levels < 3:
                raise DLMError("--levels must be at least 3")
            n0 = cfg["mms.levels"][0]
            cfg = cfg.replace(**{"mms.levels": tuple(n0 * 2 ** i for i in range(args.levels))})
        out = cfg["output.dir"]
        os.makedirs(out, exist_ok=True)
        status, outputs = COMMANDS[args.command](cfg, out)
        write_manifest(cfg, out, outputs, status)
        return status
    except (DLMError, OSError) as exc:
        print(f"dlmfsi: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
