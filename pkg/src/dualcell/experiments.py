"""Studies behind the ``dcm`` experiments.

Each study returns plain rows (lists of dicts) so the CLI and the tests
share one code path; writing CSV/VTK is left to the callers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .assembly import MaterialSpec, PmlSpec, assemble_mass, assemble_pml, nnz_per_row
from .dualgrid import build_dual, build_subcells
from .fespace import FieldSampler, build_electric_space, build_magnetic_space, interpolate
from .mesh import PrimalMesh, build_topology
from .meshgen import REGION_SCATTERER, cavity_mesh, waveguide_mesh
from .pipeline import Discretisation, discretise
from .refsol import CavitySpec, WaveguideSpec, cavity_eigenvalues, cavity_mode_tm, waveguide_reference_grid
from .spectral import eigenfunction_errors, solve_eigenpairs, spurious_scan
from .timestepper import FieldState, SourceSpec, cfl_max_timestep, inflow_driver, pml_leapfrog_run

log = logging.getLogger(__name__)


def fit_order(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h`` (nan with fewer than two distinct ``h``)."""
    h = np.log(np.asarray(h, dtype=float))
    e = np.log(np.asarray(err, dtype=float))
    if len(np.unique(h)) < 2:
        return float("nan")
    return float(np.polyfit(h, e, 1)[0])


def pairwise_orders(h, err) -> list:
    h = np.asarray(h, dtype=float)
    e = np.asarray(err, dtype=float)
    return [float(np.log(e[k] / e[k + 1]) / np.log(h[k] / h[k + 1])) for k in range(len(h) - 1)]


# --------------------------------------------------------------------------- sparsity


def sparsity_table(mesh: PrimalMesh, orders) -> list:
    """nnz per row of lumped and consistent masses of each space and of both together (no wall)."""
    topo = build_topology(mesh)
    subs = build_subcells(mesh, build_dual(mesh, topo))
    rows = []
    for P in orders:
        spaces = (build_electric_space(mesh, topo, subs, P), build_magnetic_space(mesh, topo, subs, P))
        for mode in ("lumped", "consistent"):
            N = nnz = 0
            for space in spaces:
                S = assemble_mass(space, subs, mode=mode, regions=mesh.regions).to_sparse()
                rows.append({"P": P, "mass": mode, "space": space.kind, "N": S.shape[0],
                             "nnz": int(S.nnz), "nnz_per_row": nnz_per_row(S)})
                N += S.shape[0]
                nnz += int(S.nnz)
            # the system mass diag(Me, Mh)
            rows.append({"P": P, "mass": mode, "space": "both", "N": N, "nnz": nnz, "nnz_per_row": nnz / N})
    return rows


# --------------------------------------------------------------------------- eigen


@dataclass
class EigenLevel:
    P: int
    level: int
    h: float
    n_h: int
    result: object
    analytic: np.ndarray
    report: object
    e_error: float
    h_error: float


def eigen_level(
    P: int,
    level: int,
    base=(2, 1, 1),
    count: int = 6,
    tol: float = 1e-8,
    window=(1.0, 15.0),
    spec: CavitySpec = CavitySpec(),
    seed: int = 0,
    basis: int = 60,
    mode=(2, 1),
    mode_index: int = 1,
) -> EigenLevel:
    """Cavity eigenpairs on one mesh plus the eigenfunction errors of ``mode``.

    ``mode = (m, n)`` is the TM mode of eigenvalue index ``mode_index``
    (``(2, 1)``, the eigenvalue 8, for the default box).
    """
    mesh = cavity_mesh(level, dims=(spec.a, spec.b, spec.c), base=base)
    d = discretise(mesh, P, curl="operator")
    r = solve_eigenpairs(d.Me, d.Mh, d.C, count, tol=tol, seed=seed, basis=basis)
    ana = cavity_eigenvalues(spec, count + 20)
    rep = spurious_scan(r.eigenvalues, ana, window)
    E, H = cavity_mode_tm(spec, *mode)
    e_ref = interpolate(d.e_space, d.subcells, E)[d.wall.free]
    h_ref = interpolate(d.h_space, d.subcells, H)
    ee, eh = eigenfunction_errors(
        d.Me, d.Mh, d.C, r.eigenvectors[:, mode_index], r.eigenvalues[mode_index], e_ref, h_ref
    )
    return EigenLevel(P, level, d.h_size(), d.Mh.n, r, ana[:count], rep, ee, eh)


def eigen_rows(levels: list) -> list:
    rows = []
    for lv in levels:
        r = lv.result
        for k, lam in enumerate(r.eigenvalues):
            rows.append(
                {
                    "h": lv.h,
                    "P": lv.P,
                    "level": lv.level,
                    "index": k + 1,
                    "lambda": float(lam),
                    "residual": float(r.residuals[k]),
                    "analytic": float(lv.analytic[k]),
                    "rel_error": float(abs(lam - lv.analytic[k]) / lv.analytic[k]),
                }
            )
    return rows


# --------------------------------------------------------------------------- cfl


def cfl_rows(meshes: dict, orders, tol: float = 1e-8, seed: int = 0) -> list:
    """``dt_max`` for every ``(label, mesh)`` and order."""
    rows = []
    for label, mesh in meshes.items():
        for P in orders:
            d = discretise(mesh, P, curl="operator")
            dt, lam, its = cfl_max_timestep(d.Me, d.Mh, d.C, tol=tol, seed=seed)
            rows.append(
                {"mesh": label, "P": P, "h": d.h_size(), "n_e": d.Me.n, "n_h": d.Mh.n,
                 "lambda_max": lam, "dt_max": dt, "iterations": its}
            )
    return rows


# --------------------------------------------------------------------------- time domain


def inflow_faces(mesh: PrimalMesh, topo, axis: int = 0, value: float = 0.0, tol: float = 1e-12) -> np.ndarray:
    """Boundary faces lying in the plane ``x_axis = value``."""
    x = mesh.vertices[topo.faces][:, :, axis]
    return topo.boundary_face & (np.abs(x - value) < tol).all(axis=1)


@dataclass
class WaveguideSetup:
    d: Discretisation
    pml: object
    sigma: float
    source: SourceSpec
    interior: FieldSampler
    interior_h: FieldSampler
    spec: WaveguideSpec


def waveguide_setup(
    P: int,
    level: int,
    sigma: float = 5.0,
    length: float = 2.0,
    width: float = 0.5,
    pml_length: float = 0.5,
    materials: MaterialSpec | None = None,
    mesh: PrimalMesh | None = None,
) -> WaveguideSetup:
    """Straight waveguide with inflow at ``x = 0`` and a PML slab behind ``x = length``."""
    if mesh is None:
        mesh = waveguide_mesh(level, length=length, width=width, pml_right=pml_length)
    topo = build_topology(mesh)
    patch = inflow_faces(mesh, topo)
    d = discretise(mesh, P, materials=materials, curl="operator", keep_faces=patch)
    pml = assemble_pml(mesh, d.e_space, d.h_space, d.subcells,
                       PmlSpec(axis=0, intervals=((length, length + pml_length),), sigma=sigma), d.wall)
    spec = WaveguideSpec(lx=length, ly=width, lz=width)
    ky = np.pi / width

    def spatial(x):
        out = np.zeros_like(x)
        out[:, 2] = np.sin(ky * x[:, 1])
        return out

    source = SourceSpec(patch=patch, temporal=spec.e0, spatial=spatial)
    inside = ~pml.pml_tets[d.subcells.tet]
    return WaveguideSetup(
        d, pml, sigma, source,
        FieldSampler(d.e_space, d.subcells, inside),
        FieldSampler(d.h_space, d.subcells, inside),
        spec,
    )


def _reference_on(sampler: FieldSampler, spec: WaveguideSpec, t: float, nx: int = 2001) -> np.ndarray:
    """Exact field at the sampler points (spline in x of the 1D profile)."""
    pts = sampler.points
    xs = np.linspace(0.0, spec.lx, nx)
    prof = CubicSpline(xs, waveguide_reference_grid(spec, t, xs))
    out = np.zeros_like(pts)
    out[..., 2] = prof(pts[..., 0]) * np.sin(np.pi * pts[..., 1] / spec.ly)
    return out


def waveguide_run(
    setup: WaveguideSetup,
    t_end: float = 1.0,
    cfl_factor: float = 0.9,
    sample_dt: float = 0.01,
    error_until: float | None = None,
    seed: int = 0,
) -> dict:
    """March the pulse to ``t_end``; record interior errors and energies.

    The step is the largest ``dt <= cfl_factor * dt_max`` that divides
    ``sample_dt``.  Errors are computed while ``t <= error_until`` (default
    ``t_end``); the space-time error is the trapezoidal
    ``sqrt(int ||E_h - E||^2 dt / int ||E||^2 dt)``.
    """
    d = setup.d
    dt_max, lam, _ = cfl_max_timestep(d.Me, d.Mh, d.C, seed=seed)
    per = int(np.ceil(sample_dt / (cfl_factor * dt_max)))
    dt = sample_dt / per
    n_samples = int(round(t_end / sample_dt))
    error_until = t_end if error_until is None else error_until
    state = FieldState(np.zeros(d.Me.n), np.zeros(d.Mh.n), dt)
    drive = inflow_driver(d.e_space, d.subcells, d.wall, setup.source, d.topo)
    rows = []

    def probe(q, t, st):
        e_full = d.wall.extend(st.e)
        vals = setup.interior.values(e_full)
        hv = setup.interior_h.values(st.h)
        ee = setup.interior.norm_sq(vals)
        row = {"t": t, "energy_int": 0.5 * (ee + setup.interior_h.norm_sq(hv)), "energy_e_int": 0.5 * ee}
        if t <= error_until + 1e-12:
            ref = _reference_on(setup.interior, setup.spec, t)
            row["err_sq"] = setup.interior.norm_sq(vals - ref)
            row["ref_sq"] = setup.interior.norm_sq(ref)
            row["error"] = float(np.sqrt(row["err_sq"]))
        return row

    traj = pml_leapfrog_run(state, d.Me, d.Mh, d.C, setup.pml, setup.sigma, n_samples * per,
                            drive=drive, probe=probe, stride=per)
    rows = traj.records
    with_err = [r for r in rows if "err_sq" in r]
    t = np.array([r["t"] for r in with_err])
    num = np.trapezoid([r["err_sq"] for r in with_err], t) if len(t) > 1 else np.nan
    den = np.trapezoid([r["ref_sq"] for r in with_err], t) if len(t) > 1 else np.nan
    return {
        "dt": dt,
        "dt_max": dt_max,
        "lambda_max": lam,
        "steps": n_samples * per,
        "rows": rows,
        "space_time_error": float(np.sqrt(num / den)),
        "h": d.h_size(),
        "n_e": d.Me.n,
        "n_h": d.Mh.n,
        "state": state,
    }


def sphere_materials(eps: float = 9.0) -> MaterialSpec:
    return MaterialSpec(eps={REGION_SCATTERER: eps}, mu={})
