"""
Network Multiscale Solver - Main Entry Point
Generate pore networks, run fine and multiscale diffusion solvers, upscale and compare
"""

import argparse
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

import config
from coarse_grid import assign_nodes_to_cells, build_coarse_grid
from config_helper import apply_overrides, load_run_config
from error_metrics import (ErrorSummary, cell_average, coarse_error, error_curves, error_table, l2_error,
                           monotone_trend, summarize, write_report, write_table)
from multiscale_basis import load_basis, offline_stage, save_basis
from netcore import assemble_laplacian, assemble_mass, reduce_dirichlet
from network_generator import NetworkGenerator
from network_io import network_hash, read_meta, read_network, read_solution, write_network, write_solution
from time_solver import fine_solve, online_stage
from upscaling import coarse_fv_solve, prolong_piecewise_constant, upscale_network

logger = logging.getLogger(__name__)

FAMILY_ALIASES = {
    "regular": "structured_regular",
    "irregular": "structured_irregular",
    "unstructured": "unstructured",
    "structured_regular": "structured_regular",
    "structured_irregular": "structured_irregular",
}


def banner(title):
    print("=" * 60)
    print(title)
    print("=" * 60)


def int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def cells_arg(text):
    values = int_list(text)
    return values[0] if len(values) == 1 else values


def dirichlet_arg(text):
    name, _, value = text.partition("=")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected label=value, got '{text}'") from None


def override_arg(text):
    patch, _, count = text.partition("=")
    try:
        return int(patch), int(count)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected patch=M, got '{text}'") from None


def box_arg(text):
    """'x0,y0:x1,y1' -> ((x0, y0), (x1, y1))"""
    try:
        lower, upper = text.split(":")
        return tuple(float(v) for v in lower.split(",")), tuple(float(v) for v in upper.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,..:hi,.., got '{text}'") from None


def build_run_config(args):
    """Run-config file overlaid with the flags given on the command line"""
    cfg = load_run_config(getattr(args, "config", None), getattr(args, "preset", None))
    dirichlet = dict(args.dirichlet) if getattr(args, "dirichlet", None) else None
    overrides = {
        "network.path": getattr(args, "network", None),
        "network.family": FAMILY_ALIASES.get(getattr(args, "family", None)),
        "network.dims": getattr(args, "dims", None),
        "network.dim": getattr(args, "dim", None),
        "network.seed": getattr(args, "seed", None),
        "network.removal_prob": getattr(args, "removal_prob", None),
        "network.knn": getattr(args, "knn", None),
        "properties.mode": getattr(args, "properties", None),
        "properties.throat_rule": getattr(args, "throat_rule", None),
        "properties.d_min": getattr(args, "d_min", None),
        "properties.d_max": getattr(args, "d_max", None),
        "properties.contrast_boxes": getattr(args, "contrast_box", None),
        "properties.field_path": getattr(args, "field", None),
        "properties.field_mode": getattr(args, "field_mode", None),
        "boundary.dirichlet": dirichlet,
        "time.final_time": getattr(args, "final_time", None),
        "time.n_steps": getattr(args, "steps", None),
        "time.tau": getattr(args, "tau", None),
        "time.save_every": getattr(args, "save_every", None),
        "coarse.cells": getattr(args, "cells", None),
        "coarse.delta_factor": getattr(args, "delta_factor", None),
        "coarse.weighted_averages": False if getattr(args, "unweighted", False) else None,
        "basis.count": getattr(args, "basis_count", None),
        "basis.overrides": dict(args.override) if getattr(args, "override", None) else None,
        "basis.full_eigenbasis": True if getattr(args, "full_eigenbasis", False) else None,
        "solver.method": getattr(args, "solver", None),
        "solver.rtol": getattr(args, "rtol", None),
        "solver.max_iter": getattr(args, "max_iter", None),
        "output.directory": getattr(args, "out", None),
    }
    return apply_overrides(cfg, overrides)


class NetworkRun:
    """One network loaded from disk together with its reduced fine system"""

    def __init__(self, cfg):
        self.cfg = cfg
        self.directory = cfg["network"]["path"]
        if not self.directory:
            raise ValueError("no network given; pass --network DIR")
        self.net = read_network(self.directory)
        self.meta = read_meta(self.directory)
        cfg.validate(network_dim=self.net.dim)
        self.L = assemble_laplacian(self.net)
        self.reduced = reduce_dirichlet(self.L, assemble_mass(self.net), None, cfg.boundary_spec(), self.net)
        self.u0 = np.zeros(self.net.n_nodes)
        self.out = Path(cfg["output"]["directory"])

    @property
    def volumes(self):
        return self.net.capacity if self.cfg["coarse"]["weighted_averages"] else None

    def grid(self):
        return build_coarse_grid(self.net.box, self.cfg["coarse"]["cells"])

    def read_reference(self, path):
        u_ref = read_solution(path)
        if len(u_ref) != self.net.n_nodes:
            raise ValueError(f"reference {path} has {len(u_ref)} values for {self.net.n_nodes} nodes")
        return u_ref

    def offline(self, basis_count, threads):
        basis = self.cfg["basis"]
        return offline_stage(self.net, self.grid(), self.reduced, basis_count, self.cfg.basis_overrides(),
                             basis["full_eigenbasis"], threads, network_hash(self.directory))


def _timings(args, **values):
    return {} if args.no_timings else {k: float(v) for k, v in values.items()}


def cmd_gen(args):
    cfg = build_run_config(args).validate(generating=True)
    banner("NETWORK GENERATION")
    generator = NetworkGenerator(cfg.generator_config(), cfg.property_config())
    net = generator.generate()
    out = write_network(net, cfg["output"]["directory"], generator=cfg["network"]["family"],
                        seed=int(cfg["network"]["seed"]))
    print(f"✅ Generated {cfg['network']['family']} network (seed {cfg['network']['seed']})")
    NetworkGenerator.show_network_statistics(net)
    print(f"📁 Saved to: {out}")
    return 0


def cmd_solve_fine(args):
    cfg = build_run_config(args)
    run = NetworkRun(cfg)
    tg = cfg.time_grid()
    save_every = cfg["time"]["save_every"]
    banner("FINE-SCALE SOLVE")
    print(f"Network: {run.net.n_nodes:,} nodes, {run.net.n_edges:,} edges")
    print(f"Time grid: {tg.n_steps} steps of tau = {tg.tau:.6g} (T = {tg.final_time:.6g})")

    start = time.perf_counter()
    trajectory = fine_solve(run.reduced, None, run.u0, tg, cfg.solver_config(), save_every)
    elapsed = time.perf_counter() - start

    write_solution(trajectory.final, run.out / "u.csv")
    if save_every:
        for step, u in zip(trajectory.steps, trajectory.snapshots):
            write_solution(u, run.out / f"u_step{step:05d}.csv")
    iterations = sum(d.get("iterations", 0) for d in trajectory.diagnostics)
    summary = ErrorSummary("fine", dof_h=run.net.n_nodes, timings=_timings(args, solve=elapsed),
                           seed=run.meta.get("seed"), config=cfg.sections)
    write_report([summary], run.out / "report.json")
    print(f"✅ Solved in {elapsed:.2f}s ({iterations} CG iterations)")
    print(f"   - Final time: {tg.final_time:.6g}")
    print(f"   - Solution range: {trajectory.final.min():.6g} - {trajectory.final.max():.6g}")
    print(f"📁 Saved to: {run.out / 'u.csv'}")
    return 0


def _print_patches(diagnostics):
    for d in diagnostics:
        extra = f", {d.satellites} satellite clusters" if d.satellites else ""
        print(f"   - Patch {d.patch}: {d.nodes} nodes, main cluster {d.cluster_size}, M_i = {d.basis_count}{extra}")


def cmd_basis(args):
    cfg = build_run_config(args)
    run = NetworkRun(cfg)
    banner("OFFLINE STAGE - MULTISCALE BASIS")
    start = time.perf_counter()
    projection, diagnostics = run.offline(int(cfg["basis"]["count"]), args.threads)
    elapsed = time.perf_counter() - start
    _print_patches(diagnostics)
    save_basis(projection, run.out, diagnostics)
    print(f"✅ {projection.n_rows} coarse DOFs from {len(diagnostics)} patches in {elapsed:.2f}s")
    print(f"📁 Saved to: {run.out}")
    return 0


def _load_projection(run, args):
    if not args.basis:
        raise ValueError("no basis given; pass --basis DIR or --build-basis")
    projection = load_basis(args.basis)
    expected = network_hash(run.directory)
    if projection.network_hash != expected:
        raise ValueError(f"basis in {args.basis} was built for a different network "
                         f"(hash {projection.network_hash}, network {expected})")
    if projection.n_cols != run.reduced.n_free:
        raise ValueError(f"basis has {projection.n_cols} columns for {run.reduced.n_free} free nodes; "
                         f"boundary settings differ from the basis build")
    cells = tuple(int(m) for m in run.grid().cells)
    if projection.grid_cells and projection.grid_cells != cells:
        raise ValueError(f"basis in {args.basis} was built on a {'x'.join(map(str, projection.grid_cells))} "
                         f"coarse grid, this run uses {'x'.join(map(str, cells))}")
    return projection


def cmd_ms(args):
    cfg = build_run_config(args)
    run = NetworkRun(cfg)
    tg = cfg.time_grid()
    save_every = cfg["time"]["save_every"]
    u_ref = run.read_reference(args.reference) if args.reference else None
    assignment = assign_nodes_to_cells(run.net, run.grid())
    if args.sweep_M and args.basis:
        raise ValueError("--sweep-M builds one basis per M; it cannot be combined with --basis")
    sweep = args.sweep_M or [int(cfg["basis"]["count"])]
    banner("MULTISCALE SOLVE")

    reference_trajectory = None
    if args.per_step_errors:
        if not save_every:
            raise ValueError("--per-step-errors needs --save-every")
        reference_trajectory = fine_solve(run.reduced, None, run.u0, tg, cfg.solver_config(), save_every)

    summaries = []
    for M in sweep:
        start = time.perf_counter()
        if args.build_basis or args.sweep_M:
            projection, _ = run.offline(M, args.threads)
        else:
            projection = _load_projection(run, args)
            M = max(projection.basis_counts.values()) if projection.basis_counts else M
        offline_time = time.perf_counter() - start

        start = time.perf_counter()
        fine, _, _ = online_stage(run.reduced, projection, None, run.u0, tg, save_every)
        solve_time = time.perf_counter() - start

        name = f"u_ms_M{M}.csv" if args.sweep_M else "u_ms.csv"
        write_solution(fine.final, run.out / name)
        fields = {"dof_H": projection.n_rows, "M": M, "seed": run.meta.get("seed"),
                  "timings": _timings(args, offline=offline_time, solve=solve_time), "config": cfg.sections}
        label = f"ms M={M}"
        if u_ref is not None:
            summary = summarize(label, u_ref, fine.final, run.L, assignment, run.volumes, **fields)
        else:
            summary = ErrorSummary(label, dof_h=run.net.n_nodes, **fields)
        summaries.append(summary)
        status = f"e1_h = {summary.e1_h:.4f}%, e2_h = {summary.e2_h:.4f}%" if u_ref is not None else "no reference"
        print(f"✅ M = {M}: DOF_H = {projection.n_rows}, {status}")

        if reference_trajectory is not None:
            curves = error_curves(reference_trajectory, fine, run.L)
            curves.to_csv(run.out / f"errors_per_step_M{M}.csv", index=False, float_format="%.17g",
                          lineterminator="\n")

    write_report(summaries, run.out / "report.json")
    if args.sweep_M:
        table = error_table(summaries)
        write_table(table, txt=run.out / "table.txt", csv=run.out / "table.csv", xlsx=args.xlsx)
        print()
        print(table.to_string(index=False))
        if u_ref is not None:
            trend = monotone_trend(table["e1_h"].tolist())
            print(f"{'✅' if trend else '⚠️ '} e1_h nonincreasing in M (5% slack): {trend}")
    print(f"📁 Results saved to: {run.out}")
    return 0


def cmd_upscale(args):
    cfg = build_run_config(args)
    run = NetworkRun(cfg)
    tg = cfg.time_grid()
    grid = run.grid()
    bc = cfg.boundary_spec()
    banner("UPSCALING - COARSE FINITE-VOLUME NETWORK")

    start = time.perf_counter()
    model = upscale_network(run.net, grid, bc, float(cfg["coarse"]["delta_factor"]),
                            weighted=cfg["coarse"]["weighted_averages"], threads=args.threads)
    offline_time = time.perf_counter() - start
    start = time.perf_counter()
    trajectory = coarse_fv_solve(model, bc, tg, solver_config=cfg.solver_config())
    solve_time = time.perf_counter() - start

    assignment = assign_nodes_to_cells(run.net, grid)
    u_bar = model.expand(trajectory.final)
    u_up = prolong_piecewise_constant(u_bar, assignment)
    write_network(model.to_network(), run.out / "coarse_network", generator="upscaled")
    write_solution(trajectory.final, run.out / "u_bar.csv")
    write_solution(u_up, run.out / "u_up.csv")

    for axis in range(grid.dim):
        w = model.weight[(model.axis == axis) & (model.weight > 0)]
        if len(w):
            print(f"   - Axis {axis}: {len(w)} faces, w_bar {w.min():.6g} - {w.max():.6g}")
    if model.unsolvable_faces:
        print(f"⚠️  {len(model.unsolvable_faces)} unsolvable faces set to w_bar = 0")

    fields = {"dof_H": model.n_cells, "seed": run.meta.get("seed"), "config": cfg.sections,
              "timings": _timings(args, offline=offline_time, solve=solve_time)}
    if args.reference:
        u_ref = run.read_reference(args.reference)
        summary = summarize("upscaled", u_ref, u_up, run.L, **fields)
        summary.e1_H = coarse_error(cell_average(u_ref, assignment, run.volumes), u_bar)
        print(f"✅ e1_H = {summary.e1_H:.4f}%, e1_h = {summary.e1_h:.4f}%, e2_h = {summary.e2_h:.4f}%")
    else:
        summary = ErrorSummary("upscaled", dof_h=run.net.n_nodes, **fields)
    write_report([summary], run.out / "report.json")
    print(f"✅ Coarse model: {model.n_cells} cells (DOF_H), solved in {solve_time:.2f}s")
    print(f"📁 Results saved to: {run.out}")
    return 0


def cmd_compare(args):
    cfg = build_run_config(args)
    u_ref = read_solution(args.reference)
    L, assignment, volumes = None, None, None
    if cfg["network"]["path"]:
        run = NetworkRun(cfg)
        if len(u_ref) != run.net.n_nodes:
            raise ValueError(f"reference has {len(u_ref)} values for {run.net.n_nodes} nodes")
        L, volumes = run.L, run.volumes
        assignment = assign_nodes_to_cells(run.net, run.grid())
    banner("SOLUTION COMPARISON")

    summaries = []
    for path in args.candidates:
        u_test = read_solution(path)
        stem = Path(path).stem
        match = re.search(r"_M(\d+)$", stem)
        fields = {"M": int(match.group(1)) if match else None}
        if L is not None:
            summary = summarize(stem, u_ref, u_test, L, assignment, volumes, **fields)
        else:
            summary = ErrorSummary(stem, e1_h=l2_error(u_ref, u_test), dof_h=len(u_ref), **fields)
        summaries.append(summary)

    out = Path(cfg["output"]["directory"])
    write_report(summaries, out / "report.json")
    table = error_table(summaries)
    write_table(table, txt=out / "table.txt", csv=out / "table.csv", xlsx=args.xlsx)
    print(table.to_string(index=False))
    swept = table.dropna(subset=["M"])
    if len(swept) > 1:
        trend = monotone_trend(swept["e1_h"].tolist())
        print(f"{'✅' if trend else '⚠️ '} e1_h nonincreasing in M (5% slack): {trend}")
    print(f"📁 Results saved to: {out}")
    return 0


def cmd_info(args):
    net = read_network(args.network)
    meta = read_meta(args.network)
    banner("NETWORK INFO")
    print(f"Directory: {args.network}")
    print(f"Generator: {meta.get('generator') or 'unknown'} (seed {meta.get('seed')})")
    print(f"Box: {net.box.tolist()}")
    NetworkGenerator.show_network_statistics(net)
    if args.cells is not None:
        grid = build_coarse_grid(net.box, args.cells)
        assignment = assign_nodes_to_cells(net, grid)
        print(f"Coarse grid {grid.cells.tolist()}: {grid.n_cells} cells "
              f"({len(assignment.active_cells)} active), {grid.n_coarse_nodes} coarse nodes")
    print(f"Content hash: {network_hash(args.network)}")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file (flags override it)")
    common.add_argument("--preset", choices=sorted(config.PRESETS),
                        help="named run preset (config file and flags override it)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for patch/face solves")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    common.add_argument("--no-timings", action="store_true", help="leave timings out of reports")

    time_flags = argparse.ArgumentParser(add_help=False)
    time_flags.add_argument("--network", help="network directory (nodes.csv, edges.csv, meta.json)")
    time_flags.add_argument("--out", help="output directory")
    time_flags.add_argument("--steps", type=int, help="number of time steps")
    time_flags.add_argument("--final-time", type=float)
    time_flags.add_argument("--tau", type=float, help="time step (overrides --final-time)")
    time_flags.add_argument("--dirichlet", type=dirichlet_arg, action="append", metavar="LABEL=G")
    time_flags.add_argument("--save-every", type=int)
    time_flags.add_argument("--solver", choices=["conjugate_gradient", "dense_cholesky", "dense_lu_oracle"])
    time_flags.add_argument("--rtol", type=float)
    time_flags.add_argument("--max-iter", type=int)
    time_flags.add_argument("--cells", type=cells_arg, help="coarse cells per axis, e.g. 5 or 5,5,4")

    parser = argparse.ArgumentParser(description="Multiscale diffusion solvers for pore networks")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate a network")
    gen.add_argument("--family", choices=sorted(FAMILY_ALIASES))
    gen.add_argument("--dims", type=int_list, help="lattice dims (or point count)")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--dim", type=int, choices=[2, 3], help="dimension for unstructured networks")
    gen.add_argument("--removal-prob", type=float)
    gen.add_argument("--knn", type=int)
    gen.add_argument("--properties", choices=["poiseuille_random", "high_contrast", "external_field", "unit"])
    gen.add_argument("--throat-rule", choices=["random_uniform", "harmonic_of_pores"])
    gen.add_argument("--d-min", type=float)
    gen.add_argument("--d-max", type=float)
    gen.add_argument("--contrast-box", type=box_arg, action="append", metavar="LO:HI")
    gen.add_argument("--field", help="raster coefficient field file")
    gen.add_argument("--field-mode", choices=["both", "capacity", "weight_scale"])
    gen.set_defaults(handler=cmd_gen)

    fine = sub.add_parser("solve-fine", parents=[common, time_flags], help="fine-scale reference solve")
    fine.set_defaults(handler=cmd_solve_fine)

    basis = sub.add_parser("basis", parents=[common, time_flags], help="offline stage: build R")
    basis.add_argument("-M", "--basis-count", type=int)
    basis.add_argument("--override", type=override_arg, action="append", metavar="PATCH=M")
    basis.add_argument("--full-eigenbasis", action="store_true")
    basis.set_defaults(handler=cmd_basis)

    ms = sub.add_parser("ms", parents=[common, time_flags], help="online stage: coarse solve and reconstruction")
    ms.add_argument("--basis", help="basis directory written by `basis`")
    ms.add_argument("--build-basis", action="store_true", help="build the basis inline")
    ms.add_argument("-M", "--basis-count", type=int)
    ms.add_argument("--override", type=override_arg, action="append", metavar="PATCH=M")
    ms.add_argument("--full-eigenbasis", action="store_true")
    ms.add_argument("--sweep-M", type=int_list, help="comma-separated M values")
    ms.add_argument("--reference", help="fine solution u.csv to compare against")
    ms.add_argument("--per-step-errors", action="store_true")
    ms.add_argument("--xlsx", help="also write the sweep table to an Excel file")
    ms.set_defaults(handler=cmd_ms)

    up = sub.add_parser("upscale", parents=[common, time_flags], help="flux-averaging upscaled model")
    up.add_argument("--reference", help="fine solution u.csv to compare against")
    up.add_argument("--delta-factor", type=float, help="inflow/outflow layer thickness in units of H")
    up.add_argument("--unweighted", action="store_true", help="unweighted cell averages")
    up.set_defaults(handler=cmd_upscale)

    compare = sub.add_parser("compare", parents=[common], help="compare solution files")
    compare.add_argument("reference")
    compare.add_argument("candidates", nargs="+")
    compare.add_argument("--network", help="network directory (enables e2_h and e1_H)")
    compare.add_argument("--cells", type=cells_arg)
    compare.add_argument("--unweighted", action="store_true")
    compare.add_argument("--out", required=True)
    compare.add_argument("--xlsx")
    compare.set_defaults(handler=cmd_compare)

    info = sub.add_parser("info", parents=[common], help="network statistics")
    info.add_argument("--network", required=True)
    info.add_argument("--cells", type=cells_arg)
    info.set_defaults(handler=cmd_info)
    return parser


def main(argv=None):
    """Command-line entry point; returns the process exit code"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except Exception as e:
        print(f"❌ Error: {e}")
        logger.debug("command failed", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
