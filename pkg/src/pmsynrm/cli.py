"""Command-line entry point: solve, sweep, optimize, postprocess, curves."""
from __future__ import annotations

import os

_threads = os.environ.get("PMSYNRM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

import argparse
import csv
import hashlib
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from .design import AugLagState, tanh_projection
from .fem import DensityField, ElementMaterial, SolverError
from .materials import (InterpolationScheme, MarroccoCurve, interp_derivative, interp_value,
                        reluctivity, reluctivity_derivative)
from .optimizer import optimize, write_history_csv
from .postprocess import (ClusteringError, apply_clustering, extract_magnet_cells, kmeans_cluster,
                          write_cluster_report)
from .torque import average_torque, torque_sweep, write_sweep_csv
from .vtk import write_design_vtk, write_state_vtk

log = logging.getLogger("pmsynrm")


# ---------------------------------------------------------------- helpers

def save_design(path, X: DensityField) -> None:
    np.savez(path, rho_nu=X.rho_nu, rho_mx=X.rho_mx, rho_my=X.rho_my)


def load_design(path) -> DensityField:
    with np.load(path) as data:
        return DensityField(data["rho_nu"], data["rho_mx"], data["rho_my"])


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_summary(out: Path, entries: dict, files: list[Path]) -> Path:
    path = out / "summary.txt"
    lines = [f"{k} = {v}" for k, v in entries.items()]
    lines.append("")
    lines.append("[files]")
    lines += [f"{p.name} sha256={sha256(p)}" for p in files]
    path.write_text("\n".join(lines) + "\n")
    return path


def resolve_config(args) -> C.RunConfig:
    cfg = C.preset_config(args.preset) if getattr(args, "preset", None) else C.default_config()
    if getattr(args, "config", None):
        cfg = C.load_config(args.config, base=cfg)
    if getattr(args, "max_iter", None) is not None:
        cfg = C.apply_overrides(cfg, {"optimizer": {"max_iter": args.max_iter}}, source=cfg.source)
    if getattr(args, "target_h", None) is not None:
        cfg = C.apply_overrides(cfg, {"solver": {"target_h": args.target_h}}, source=cfg.source)
    return cfg


def output_dir(args, cfg: C.RunConfig) -> Path:
    out = Path(args.out or cfg["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def initial_design(cfg: C.RunConfig, model, args) -> DensityField:
    if getattr(args, "design", None):
        return load_design(args.design)
    X = C.start_design(cfg, model)
    if X is not None:
        return X
    start = cfg["optimizer"]["start"]
    if start.startswith("preset:"):
        base = C.preset_config(start.split(":", 1)[1])
        # the base stage shares mesh and solver settings with this run
        base.values["solver"] = dict(cfg["solver"])
        base.values["optimizer"]["max_iter"] = cfg["optimizer"]["max_iter"]
        log.info("running base stage %s", start)
        X = run_optimization(base, C.model(base), None)[0].design
        # magnet channels restart from neutral gray
        return DensityField(X.rho_nu, np.full(len(X), 0.5), np.full(len(X), 0.5))
    path = Path(start)
    if path.exists():
        return load_design(path)
    raise C.ConfigError(f"[optimizer] start: unknown start {start!r}")


def run_optimization(cfg: C.RunConfig, model, start: DensityField | None, out: Path | None = None,
                     snapshot_every: int = 0):
    obj = C.objective(cfg, model)
    opt_cfg = C.optimizer_config(cfg)
    if start is None:
        start = C.start_design(cfg, model)
    files = []

    def snapshot(it, X, ev):
        if out is not None and snapshot_every and it % snapshot_every == 0:
            p = out / f"snapshot_{it:04d}.vtk"
            write_design_vtk(p, model, design_fields(X, ev.phys))
            files.append(p)

    result = optimize(obj, start, opt_cfg, callback=snapshot, log=log.info)
    return result, obj, files


def design_fields(X: DensityField, phys) -> dict:
    mag = np.linalg.norm(phys.magnetization, axis=1)
    return {"rho_nu": X.rho_nu, "rho_mx": X.rho_mx, "rho_my": X.rho_my,
            "rho_nu_projected": phys.rho_nu, "M_abs": mag,
            "M_angle": np.mod(np.arctan2(phys.magnetization[:, 1], phys.magnetization[:, 0]), 2 * math.pi)}


# ---------------------------------------------------------------- subcommands

def cmd_solve(args) -> int:
    cfg = resolve_config(args)
    out = output_dir(args, cfg)
    model = C.model(cfg)
    X = initial_design(cfg, model, args)
    obj = C.objective(cfg, model)
    phys = obj.design_map.forward(X)
    mat = ElementMaterial(phys.rho_nu, phys.magnetization, phys.key)
    t0 = time.perf_counter()
    state = model.solve_state(mat, args.theta, **C.solver_options(cfg))
    T = obj.evaluator.torque(state.U)
    vtk = out / "state.vtk"
    write_state_vtk(vtk, model, state)
    print(f"torque_Nm = {T:.9g}")
    write_summary(out, {"command": "solve", "config": cfg.source, "theta_rad": args.theta,
                        "torque_Nm": f"{T:.12g}", "newton_iters": state.newton_iters,
                        "residual_norm": f"{state.residual_norm:.3e}",
                        "wall_time_s": f"{time.perf_counter() - t0:.2f}"}, [vtk])
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    out = output_dir(args, cfg)
    model = C.model(cfg)
    X = initial_design(cfg, model, args)
    obj = C.objective(cfg, model)
    phys = obj.design_map.forward(X)
    mat = ElementMaterial(phys.rho_nu, phys.magnetization, phys.key)
    n = args.positions or cfg["output"]["sweep_positions"]
    t0 = time.perf_counter()
    sweep = torque_sweep(model, mat, n, obj.evaluator)
    four = average_torque(model.solve_four_positions(mat), obj.evaluator)
    dense = float(np.mean([t for _, t in sweep]))
    path = out / "torque_sweep.csv"
    write_sweep_csv(path, sweep)
    print(f"dense_average_Nm = {dense:.9g}\nfour_point_Nm = {four:.9g}")
    write_summary(out, {"command": "sweep", "config": cfg.source, "positions": n,
                        "dense_average_Nm": f"{dense:.12g}", "four_point_Nm": f"{four:.12g}",
                        "wall_time_s": f"{time.perf_counter() - t0:.2f}"}, [path])
    return 0


def cmd_optimize(args) -> int:
    cfg = resolve_config(args)
    out = output_dir(args, cfg)
    t0 = time.perf_counter()
    model = C.model(cfg)
    start = initial_design(cfg, model, args)
    result, obj, files = run_optimization(cfg, model, start, out, cfg["output"]["snapshot_every"])
    hist = out / "history.csv"
    write_history_csv(hist, result.history)
    design = out / "design.npz"
    save_design(design, result.design)
    files += [hist, design]
    entries = {"command": "optimize", "config": cfg.source, "stop_reason": result.reason}
    if result.evaluation is not None:
        ev = result.evaluation
        vtk = out / "design.vtk"
        write_design_vtk(vtk, model, design_fields(result.design, ev.phys))
        files.append(vtk)
        entries.update(T_bar_Nm=f"{ev.torque:.12g}", vol_iron=f"{ev.vol_iron:.6g}",
                       vol_magnet=f"{ev.vol_magnet:.6g}", iterations=len(result.history) - 1)
        print(f"T_bar_Nm = {ev.torque:.9g}\nvol_iron = {ev.vol_iron:.6g}\nvol_magnet = {ev.vol_magnet:.6g}")
        magnets_active = any(c.strip() in ("mx", "my") for c in cfg["optimizer"]["active_channels"].split(","))
        if args.cluster and magnets_active:
            try:
                entries.update(_cluster(cfg, model, obj, result.design, out, files))
            except ClusteringError as exc:
                print(f"warning: clustering skipped: {exc}", file=sys.stderr)
                entries["kmeans"] = f"skipped ({exc})"
    if result.error:
        entries["error"] = result.error
    entries["wall_time_s"] = f"{time.perf_counter() - t0:.2f}"
    write_summary(out, entries, files)
    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
        return 2
    return 0


def _cluster(cfg, model, obj, X: DensityField, out: Path, files: list) -> dict:
    ccfg = C.cluster_config(cfg)
    p = cfg["postprocess"]
    cells = extract_magnet_cells(X, model.rotor.centroids()[model.design_elements], model.design_areas,
                                 p["magnitude_threshold"], p["iron_threshold"])
    labels, centers = kmeans_cluster(cells, ccfg)
    Xc = apply_clustering(X, cells, labels, centers)
    al = AugLagState()
    before = obj.evaluate(X, al).torque
    after = obj.evaluate(Xc, al).torque
    report = out / "clusters.csv"
    write_cluster_report(report, cells, labels, centers)
    clustered = out / "design_clustered.npz"
    save_design(clustered, Xc)
    files += [report, clustered]
    print(f"T_bar_before_kmeans_Nm = {before:.9g}\nT_bar_after_kmeans_Nm = {after:.9g}")
    return {"T_bar_before_kmeans_Nm": f"{before:.12g}", "T_bar_after_kmeans_Nm": f"{after:.12g}",
            "kmeans_k": ccfg.k, "kmeans_seed": ccfg.seed, "magnet_cells": len(cells)}


def cmd_postprocess(args) -> int:
    cfg = resolve_config(args)
    out = output_dir(args, cfg)
    t0 = time.perf_counter()
    model = C.model(cfg)
    obj = C.objective(cfg, model)
    if cfg["optimizer"]["beta_start"].lower() != "none":
        obj.design_map = obj.design_map.with_params(
            replace(obj.design_map.params, beta=cfg["optimizer"]["beta_max"]))
    X = load_design(args.design)
    files: list[Path] = []
    try:
        entries = _cluster(cfg, model, obj, X, out, files)
    except ClusteringError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    entries = {"command": "postprocess", "config": cfg.source, **entries,
               "wall_time_s": f"{time.perf_counter() - t0:.2f}"}
    write_summary(out, entries, files)
    return 0


def cmd_curves(args) -> int:
    cfg = resolve_config(args)
    out = output_dir(args, cfg)
    files = []
    b = np.linspace(0.0, 3.0, 301)
    cons = MarroccoCurve()
    pub = MarroccoCurve(variant="published")
    p = out / "reluctivity.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["B_T", "nu_consistent", "dnu_consistent", "nu_published", "H_consistent"])
        for bi, n1, d1, n2 in zip(b, reluctivity(cons, b), reluctivity_derivative(cons, b), reluctivity(pub, b)):
            w.writerow([f"{bi:.6g}", f"{n1:.10g}", f"{d1:.10g}", f"{n2:.10g}", f"{n1 * bi:.10g}"])
    files.append(p)
    rho = np.linspace(0.0, 1.0, 101)
    schemes = {"simp3": InterpolationScheme.simp(3.0), "lukas5": InterpolationScheme.lukas(5.0),
               "td": InterpolationScheme.td()}
    p = out / "interpolation.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rho"] + [f"f_{k}" for k in schemes] + [f"df_{k}" for k in schemes])
        vals = [interp_value(s, rho) for s in schemes.values()]
        ders = [interp_derivative(s, rho) for s in schemes.values()]
        for i, r in enumerate(rho):
            w.writerow([f"{r:.6g}"] + [f"{v[i]:.10g}" for v in vals] + [f"{d[i]:.10g}" for d in ders])
    files.append(p)
    betas = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
    p = out / "projection.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rho"] + [f"beta_{bb:g}" for bb in betas])
        cols = [tanh_projection(rho, bb, 0.5) for bb in betas]
        for i, r in enumerate(rho):
            w.writerow([f"{r:.6g}"] + [f"{c[i]:.10g}" for c in cols])
    files.append(p)
    write_summary(out, {"command": "curves"}, files)
    for f in files:
        print(f)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmsynrm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, design=True):
        p.add_argument("--config", help="INI file with overrides")
        p.add_argument("--preset", choices=sorted(C.PRESETS), help="embedded study preset")
        p.add_argument("--out", help="output directory (default from config)")
        p.add_argument("--target-h", type=float, help="mesh size override in metres")
        if design:
            p.add_argument("--design", help="design .npz (default: the configured start)")

    p = sub.add_parser("solve", help="solve the state problem at one rotor angle")
    common(p)
    p.add_argument("--theta", type=float, default=0.0, help="rotor angle in radians")
    p.set_defaults(func=cmd_solve)

    for name in ("sweep", "torque-sweep"):
        p = sub.add_parser(name, help="torque over equally spaced rotor angles")
        common(p)
        p.add_argument("--positions", type=int, help="number of angles (default 60)")
        p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("optimize", help="run the topology optimisation")
    common(p)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--no-cluster", dest="cluster", action="store_false",
                   help="skip K-means post-processing of magnet designs")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("postprocess", help="K-means homogenisation of magnet directions")
    common(p, design=False)
    p.add_argument("--design", required=True)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("curves", help="tabulate material laws and projections")
    common(p, design=False)
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
