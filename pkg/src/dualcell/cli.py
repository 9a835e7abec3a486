"""``dcm <experiment> --config FILE``: configuration-driven experiment driver.

Configs are INI files.  The ``[mesh]`` section picks a generator; each
experiment reads its own section (``[sparsity]``, ``[eigen]``, ``[cfl]``,
``[waveguide]``, ``[sphere]``).  Every run writes CSV tables, legacy-VTK
files and ``manifest.txt`` into the output directory.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .dualgrid import build_dual, build_subcells, export_dual_vtk, export_subcells_vtk
from .experiments import (
    cfl_rows,
    eigen_level,
    eigen_rows,
    fit_order,
    sparsity_table,
    sphere_materials,
    waveguide_run,
    waveguide_setup,
)
from .fespace import FieldSampler
from .mesh import MeshError, build_topology, load_mesh
from .meshgen import cavity_mesh, cube_mesh, perturb, sphere_waveguide_mesh, waveguide_mesh
from .pipeline import discretise

log = logging.getLogger("dcm")

EXPERIMENTS = ("sparsity", "eigen", "cfl", "waveguide", "sphere")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- config helpers


def _ints(text: str) -> list:
    return [int(t) for t in text.replace(",", " ").split()]


def _floats(text: str) -> list:
    return [float(t) for t in text.replace(",", " ").split()]


def _get(cfg, section, key, conv=str, default=None):
    if cfg.has_option(section, key):
        raw = cfg.get(section, key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
    if default is None:
        raise ConfigError(f"missing key [{section}] {key}")
    return default


def load_config(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = configparser.ConfigParser()
    cfg.read(path)
    return cfg


def build_mesh(cfg, level: int | None = None):
    """Mesh from the ``[mesh]`` section; ``level`` overrides ``mesh.level``."""
    sec = "mesh"
    gen = _get(cfg, sec, "generator", str, "cube")
    lv = level if level is not None else _get(cfg, sec, "level", int, 1)
    if gen == "file":
        path = Path(_get(cfg, sec, "file"))
        if not path.is_file():
            raise ConfigError(f"mesh file not found: {path}")
        mesh = load_mesh(path)
    elif gen == "cube":
        mesh = cube_mesh(lv)
    elif gen == "cavity":
        dims = tuple(_get(cfg, sec, "dims", _floats, [np.pi, np.pi / 2, np.pi / 4]))
        base = _get(cfg, sec, "base", _ints, [2, 1, 1])
        mesh = cavity_mesh(lv, dims=dims, base=base)
    elif gen == "waveguide":
        mesh = waveguide_mesh(lv, length=_get(cfg, sec, "length", float, 2.0),
                              width=_get(cfg, sec, "width", float, 0.5),
                              pml_right=_get(cfg, sec, "pml_length", float, 0.5))
    elif gen == "sphere":
        mesh = sphere_waveguide_mesh(lv, radius=_get(cfg, sec, "radius", float, 0.15),
                                     center=tuple(_get(cfg, sec, "center", _floats, [1.0, 0.25, 0.25])),
                                     length=_get(cfg, sec, "length", float, 2.0),
                                     width=_get(cfg, sec, "width", float, 0.5),
                                     pml_right=_get(cfg, sec, "pml_length", float, 0.5))
    else:
        raise ConfigError(f"unknown mesh generator {gen!r}")
    amp = _get(cfg, sec, "perturb", float, 0.0)
    if amp > 0:
        mesh = perturb(mesh, amp, seed=_get(cfg, sec, "perturb_seed", int, 0))
    return mesh


def write_csv(path, rows: list, columns=None) -> None:
    columns = columns or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _mesh_vtk(out: Path, mesh, name="mesh"):
    topo = build_topology(mesh)
    dual = build_dual(mesh, topo)
    subs = build_subcells(mesh, dual)
    export_subcells_vtk(out / f"{name}_subcells.vtk", subs)
    export_dual_vtk(out / f"{name}_dual_faces.vtk", dual)


def _field_vtk(path, d, space, coeffs, name):
    """Field at the subcell centres as hexahedron cell data."""
    smp = FieldSampler(space, d.subcells, npts=1)
    v = smp.values(coeffs)[:, 0]
    export_subcells_vtk(path, d.subcells, {name: v, f"|{name}|": np.linalg.norm(v, axis=1)})


# --------------------------------------------------------------------------- experiments


def run_sparsity(cfg, out: Path, seed: int, info: dict):
    mesh = build_mesh(cfg)
    info["mesh_hash"] = mesh.hash()
    orders = _get(cfg, "sparsity", "orders", _ints, [1, 2, 3, 4])
    rows = sparsity_table(mesh, orders)
    write_csv(out / "sparsity.csv", rows)
    _mesh_vtk(out, mesh)
    return rows


def run_eigen(cfg, out: Path, seed: int, info: dict):
    sec = "eigen"
    orders = _get(cfg, sec, "orders", _ints, [2, 3])
    levels = _get(cfg, sec, "levels", _ints, [1, 2])
    count = _get(cfg, sec, "count", int, 6)
    tol = _get(cfg, sec, "tol", float, 1e-8)
    window = tuple(_get(cfg, sec, "window", _floats, [1.0, 15.0]))
    base = tuple(_get(cfg, "mesh", "base", _ints, [2, 1, 1]))
    basis = _get(cfg, sec, "basis", int, 60)
    results = []
    hashes = []
    for P in orders:
        for lv in levels:
            hashes.append(cavity_mesh(lv, base=base).hash())
            res = eigen_level(P, lv, base=base, count=count, tol=tol, window=window, seed=seed, basis=basis)
            log.info("P=%d level=%d lambda=%s", P, lv, res.result.eigenvalues)
            results.append(res)
    info["mesh_hash"] = " ".join(dict.fromkeys(hashes))
    write_csv(out / "eigenvalues.csv", eigen_rows(results))
    spur = [
        {"P": r.P, "level": r.level, "h": r.h, "window_lo": window[0], "window_hi": window[1],
         "flags": r.report.n_flags, "flagged": " ".join(f"{v:.10g}" for v in r.report.flagged),
         "missing": " ".join(f"{v:.10g}" for v in r.report.missing), "kernel": r.result.kernel_count}
        for r in results
    ]
    write_csv(out / "spurious.csv", spur)
    conv = []
    for r in results:
        lam2 = r.result.eigenvalues[1]
        conv.append({"P": r.P, "level": r.level, "h": r.h, "n_h": r.n_h,
                     "lambda2": float(lam2), "lambda2_error": float(abs(lam2 - r.analytic[1]) / r.analytic[1]),
                     "e_error": r.e_error, "h_error": r.h_error})
    write_csv(out / "convergence.csv", conv)
    orders_rows = []
    for P in orders:
        sel = [c for c in conv if c["P"] == P]
        if len(sel) >= 2:
            h = [c["h"] for c in sel]
            orders_rows.append({"P": P,
                                "lambda2_order": fit_order(h, [c["lambda2_error"] for c in sel]),
                                "e_order": fit_order(h, [c["e_error"] for c in sel]),
                                "h_order": fit_order(h, [c["h_error"] for c in sel])})
    if orders_rows:
        write_csv(out / "orders.csv", orders_rows)
    # lambda_2 mode on the finest mesh of the last order
    last = results[-1]
    mesh = cavity_mesh(last.level, base=base)
    d = discretise(mesh, last.P, curl="operator")
    _field_vtk(out / "mode_lambda2_H.vtk", d, d.h_space, last.result.eigenvectors[:, 1], "H")
    return conv


def run_cfl(cfg, out: Path, seed: int, info: dict):
    sec = "cfl"
    levels = _get(cfg, sec, "levels", _ints, [1, 2, 4])
    orders = _get(cfg, sec, "orders", _ints, [1, 2, 3, 4])
    fixed = _get(cfg, sec, "fixed_level", int, levels[0])
    fixed_P = _get(cfg, sec, "fixed_order", int, 1)
    tol = _get(cfg, sec, "tol", float, 1e-8)
    meshes_h = {f"level{lv}": build_mesh(cfg, lv) for lv in levels}
    rows = cfl_rows(meshes_h, [fixed_P], tol=tol, seed=seed)
    rows += [r for r in cfl_rows({f"level{fixed}": build_mesh(cfg, fixed)}, orders, tol=tol, seed=seed)
             if r["P"] != fixed_P or f"level{fixed}" not in meshes_h]
    info["mesh_hash"] = " ".join(m.hash() for m in meshes_h.values())
    write_csv(out / "cfl.csv", rows)
    by_h = sorted([r for r in rows if r["P"] == fixed_P], key=lambda r: r["h"])
    by_p = sorted([r for r in rows if r["mesh"] == f"level{fixed}"], key=lambda r: r["P"])
    fits = [{"fit": "dt_vs_h", "P": fixed_P, "exponent": fit_order([r["h"] for r in by_h], [r["dt_max"] for r in by_h])},
            {"fit": "dt_vs_P+1", "P": "", "exponent": fit_order([r["P"] + 1 for r in by_p], [r["dt_max"] for r in by_p])}]
    write_csv(out / "cfl_fits.csv", fits)
    _mesh_vtk(out, meshes_h[f"level{levels[0]}"])
    return rows + fits


def run_waveguide(cfg, out: Path, seed: int, info: dict, sphere: bool = False):
    sec = "sphere" if sphere else "waveguide"
    orders = _get(cfg, sec, "orders", _ints, [2])
    levels = _get(cfg, sec, "levels", _ints, [2])
    sigma = _get(cfg, sec, "sigma", float, 5.0)
    t_end = _get(cfg, sec, "t_end", float, 1.0)
    err_until = _get(cfg, sec, "error_until", float, t_end)
    cfl = _get(cfg, sec, "cfl_factor", float, 0.9)
    sample = _get(cfg, sec, "sample_dt", float, 0.01)
    if t_end <= 0:
        raise ConfigError("t_end must be positive")
    mats = sphere_materials(_get(cfg, sec, "eps", float, 9.0)) if sphere else None
    summary = []
    hashes = []
    for P in orders:
        for lv in levels:
            mesh = build_mesh(cfg, lv)
            hashes.append(mesh.hash())
            setup = waveguide_setup(P, lv, sigma=sigma, materials=mats, mesh=mesh,
                                    length=_get(cfg, "mesh", "length", float, 2.0),
                                    width=_get(cfg, "mesh", "width", float, 0.5),
                                    pml_length=_get(cfg, "mesh", "pml_length", float, 0.5))
            res = waveguide_run(setup, t_end=t_end, cfl_factor=cfl, sample_dt=sample,
                                error_until=-1.0 if sphere else err_until, seed=seed)
            cols = ["t", "energy_int"] + ([] if sphere else ["error"])
            write_csv(out / f"trajectory_P{P}_L{lv}.csv", res["rows"], cols)
            row = {"P": P, "level": lv, "h": res["h"], "n_e": res["n_e"], "n_h": res["n_h"],
                   "dt": res["dt"], "dt_max": res["dt_max"], "steps": res["steps"],
                   "peak_energy_int": max(r["energy_int"] for r in res["rows"]),
                   "final_energy_int": res["rows"][-1]["energy_int"]}
            if not sphere:
                row["space_time_error"] = res["space_time_error"]
            summary.append(row)
            _field_vtk(out / f"final_E_P{P}_L{lv}.vtk", setup.d, setup.d.e_space,
                       setup.d.wall.extend(res["state"].e), "E")
    info["mesh_hash"] = " ".join(hashes)
    write_csv(out / "summary.csv", summary)
    if not sphere:
        fits = []
        for P in orders:
            sel = [s for s in summary if s["P"] == P]
            if len(sel) >= 2:
                fits.append({"P": P, "order": fit_order([s["h"] for s in sel], [s["space_time_error"] for s in sel])})
        if fits:
            write_csv(out / "orders.csv", fits)
    return summary


def run_sphere(cfg, out, seed, info):
    return run_waveguide(cfg, out, seed, info, sphere=True)


RUNNERS = {
    "sparsity": run_sparsity,
    "eigen": run_eigen,
    "cfl": run_cfl,
    "waveguide": run_waveguide,
    "sphere": run_sphere,
}


# --------------------------------------------------------------------------- entry point


def _threads(arg) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get("DCM_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"DCM_THREADS must be an integer, got {env!r}") from None
    return None


def write_manifest(path, experiment, config_path, cfg, seed, threads, info, outputs) -> None:
    lines = [
        f"experiment: {experiment}",
        f"dualcell: {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        f"seed: {seed}",
        f"threads: {threads if threads is not None else 'default'}",
        f"mesh_hash: {info.get('mesh_hash', '')}",
        f"config: {config_path}",
        "outputs:",
    ]
    lines += [f"  {o}" for o in outputs]
    lines.append("config_echo:")
    for sec in cfg.sections():
        lines.append(f"  [{sec}]")
        lines += [f"  {k} = {v}" for k, v in cfg.items(sec)]
    Path(path).write_text("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcm", description="Dual cell method experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (fallback: DCM_THREADS)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="dcm-out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        threads = _threads(args.threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        info: dict = {}
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                RUNNERS[args.experiment](cfg, out, args.seed, info)
        else:
            RUNNERS[args.experiment](cfg, out, args.seed, info)
        outputs = sorted(p.name for p in out.iterdir() if p.name != "manifest.txt")
        write_manifest(out / "manifest.txt", args.experiment, args.config, cfg, args.seed, threads, info, outputs)
    except (ConfigError, configparser.Error) as exc:
        print(f"dcm: configuration error: {exc}", file=sys.stderr)
        return 2
    except (MeshError, RuntimeError, ValueError) as exc:
        print(f"dcm: {args.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"dcm: {args.experiment} done, outputs in {out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
