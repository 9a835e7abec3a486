"""Leap-frog time integration, CFL bound, PML-damped variant and inflow.

Electric coefficients live at integer steps ``q dt``, magnetic ones at
half steps.  Mass inverses are applied block-wise; ``C`` may be a sparse
matrix or a :class:`~dualcell.assembly.CurlOperator`.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockDiagMatrix, PmlMatrices
from .fespace import BoundaryConstraint, DofSpace, dof_nodes
from .spectral import CurlCurl

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class PowerIterationError(RuntimeError):
    def __init__(self, msg, last):
        super().__init__(msg)
        self.last = last


@dataclass
class FieldState:
    """``e`` at ``q dt``; ``h`` at ``(q + 1/2) dt`` once ``staggered`` is set, else at ``q dt``."""

    e: np.ndarray
    h: np.ndarray
    dt: float
    q: int = 0
    e_hat: np.ndarray | None = None
    h_hat: np.ndarray | None = None
    staggered: bool = False

    @property
    def time(self) -> float:
        return self.q * self.dt

    def copy(self) -> "FieldState":
        cp = lambda a: None if a is None else a.copy()  # noqa: E731
        return FieldState(cp(self.e), cp(self.h), self.dt, self.q, cp(self.e_hat), cp(self.h_hat), self.staggered)


@dataclass
class SourceSpec:
    """Tangential electric field ``temporal(t) * spatial(x)`` imposed on a boundary patch.

    ``patch`` is a boolean mask over primal faces.
    """

    patch: np.ndarray
    temporal: Callable
    spatial: Callable


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def write_csv(self, path, columns=None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            extra = list(self.records[0].keys()) if self.records else []
            w.writerow(["t", "energy"] + extra)
            for k, t in enumerate(self.times):
                en = self.energy[k] if k < len(self.energy) else ""
                rec = self.records[k] if k < len(self.records) else {}
                w.writerow([repr(t), repr(en)] + [repr(rec.get(c, "")) for c in extra])


# --------------------------------------------------------------------------- CFL


def cfl_max_timestep(
    Me: BlockDiagMatrix,
    Mh: BlockDiagMatrix,
    C,
    tol: float = 1e-8,
    maxiter: int = 5000,
    seed: int = 0,
    method: str = "lanczos",
) -> tuple[float, float, int]:
    """Largest ``lambda`` of ``C Me^-1 C^T u = lambda Mh u`` and ``dt_max = 2 / sqrt(lambda)``.

    ``method='lanczos'`` runs ARPACK on the symmetrised pencil (robust when
    the top of the spectrum is clustered); ``'power'`` is plain power
    iteration stopped when the Rayleigh quotient changes by less than ``tol``
    relatively.  Returns ``(dt_max, lambda, operator applications)``.
    """
    rng = np.random.default_rng(seed)
    if method == "lanczos":
        S = CurlCurl(Me, Mh, C)
        op = spla.LinearOperator((S.n, S.n), matvec=lambda x: S @ x, dtype=float)
        try:
            lam = spla.eigsh(op, k=1, which="LA", tol=tol, maxiter=maxiter, v0=rng.standard_normal(S.n),
                             return_eigenvectors=False)[0]
        except spla.ArpackNoConvergence as exc:
            raise PowerIterationError("Lanczos did not converge", np.nan) from exc
        return 2.0 / np.sqrt(lam), float(lam), S.applications
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    u = rng.standard_normal(Mh.n)
    Mhs = Mh.to_sparse()
    lam_old = 0.0
    lam = 0.0
    for it in range(1, maxiter + 1):
        w = C @ Me.solve(C.T @ u)
        lam = float(u @ w) / float(u @ (Mhs @ u))
        u = Mh.solve(w)
        u /= np.linalg.norm(u)
        if it > 1 and abs(lam - lam_old) <= tol * abs(lam):
            return 2.0 / np.sqrt(lam), lam, it
        lam_old = lam
    raise PowerIterationError(f"power iteration did not converge in {maxiter} iterations", 2.0 / np.sqrt(lam))


# --------------------------------------------------------------------------- inflow


class _InflowPartition:
    """Split of the free electric unknowns into driven (D) and updated (I) sets."""

    def __init__(self, Me: BlockDiagMatrix, driven: np.ndarray):
        n = Me.n
        self.D = np.asarray(driven, dtype=np.int64)
        mask = np.ones(n, dtype=bool)
        mask[self.D] = False
        self.I = np.nonzero(mask)[0]
        M = Me.to_sparse()
        self.M_II = BlockDiagMatrix.from_sparse(M[self.I][:, self.I])
        self.M_ID = sp.csr_matrix(M[self.I][:, self.D])


def inflow_dofs(space: DofSpace, constraint: BoundaryConstraint, source: SourceSpec, topo) -> np.ndarray:
    """Positions (in the free numbering) of the DOFs driven by ``source``."""
    patch = np.asarray(source.patch, dtype=bool)
    if (patch & ~topo.boundary_face).any():
        raise ValueError("inflow patch is not on the boundary")
    pos = np.searchsorted(constraint.free, constraint.prescribed)
    if not np.array_equal(constraint.free[pos], constraint.prescribed):
        raise ValueError("prescribed DOFs must be kept in the free set")
    return pos


def _inflow_profile(space: DofSpace, subcells, constraint: BoundaryConstraint, source: SourceSpec) -> np.ndarray:
    ids = constraint.prescribed
    X, T = dof_nodes(space, subcells)
    return np.einsum("nd,nd->n", np.asarray(source.spatial(X[ids]), dtype=float), T[ids])


def inject_inflow(space: DofSpace, subcells, constraint: BoundaryConstraint, source: SourceSpec, t: float) -> np.ndarray:
    """Covariant DOF values ``temporal(t) spatial(x) . dx/dxhat_i`` on the driven DOFs."""
    return float(source.temporal(t)) * _inflow_profile(space, subcells, constraint, source)


def inflow_driver(space: DofSpace, subcells, constraint: BoundaryConstraint, source: SourceSpec, topo):
    """``(driven positions, t -> values)`` for the ``drive`` argument of the runners."""
    pos = inflow_dofs(space, constraint, source, topo)
    prof = _inflow_profile(space, subcells, constraint, source)
    return pos, lambda t: float(source.temporal(t)) * prof


# --------------------------------------------------------------------------- leap-frog


class _Stepper:
    """Shared update kernels for the plain and the PML leap-frog."""

    def __init__(self, Me, Mh, C, dt, drive=None):
        self.Me, self.Mh, self.C, self.dt = Me, Mh, C, dt
        self.drive = drive  # (partition, callable t -> driven values) or None

    def e_update(self, e: np.ndarray, rhs: np.ndarray, t_next: float) -> np.ndarray:
        if self.drive is None:
            return e + self.dt * self.Me.solve(rhs)
        part, values = self.drive
        new = e.copy()
        g = values(t_next)
        de_D = g - e[part.D]
        new[part.D] = g
        new[part.I] = e[part.I] + part.M_II.solve(self.dt * rhs[part.I] - part.M_ID @ de_D)
        return new

    def h_update(self, h: np.ndarray, rhs: np.ndarray, scale: float = 1.0) -> np.ndarray:
        return h + (scale * self.dt) * self.Mh.solve(rhs)


def _check(q, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SimulationError(f"non-finite field values at step {q}")


def staggered_energy(Me: BlockDiagMatrix, Mh: BlockDiagMatrix, e, h_prev, h_next) -> float:
    """``e^T Me e + h_prev^T Mh h_next``."""
    return float(e @ Me.matvec(e) + h_prev @ Mh.matvec(h_next))


def unstagger(state: FieldState, Mh: BlockDiagMatrix, C) -> FieldState:
    """Bring ``h`` back from ``(q + 1/2) dt`` to ``q dt`` (inverse of the start-up half step, in place).

    Negating ``state.dt`` afterwards and running again retraces the steps.
    """
    if state.staggered:
        state.h = state.h + (0.5 * state.dt) * Mh.solve(C @ state.e)
        state.staggered = False
    return state


def _make_drive(Me, drive):
    if drive is None:
        return None
    driven, values = drive
    return (_InflowPartition(Me, driven), values)


def leapfrog_run(
    state: FieldState,
    Me: BlockDiagMatrix,
    Mh: BlockDiagMatrix,
    C,
    Q: int,
    drive=None,
    probe: Callable | None = None,
    stride: int = 1,
    energy: bool = False,
    dt_max: float | None = None,
) -> Trajectory:
    """Advance ``state`` by ``Q`` leap-frog steps (in place).

    ``drive = (driven positions, t -> values)`` imposes electric values
    strongly.  ``probe(q, t, state)`` returning a dict is recorded every
    ``stride`` steps; ``energy=True`` records the staggered energy.
    """
    dt = state.dt
    if dt_max is not None and dt >= dt_max:
        warnings.warn(f"dt={dt} is not below the CFL bound {dt_max}", stacklevel=2)
    st = _Stepper(Me, Mh, C, dt, _make_drive(Me, drive))
    traj = Trajectory()
    MeS, MhS = (Me.to_sparse(), Mh.to_sparse()) if energy else (None, None)
    if not state.staggered:
        state.h = st.h_update(state.h, -(C @ state.e), 0.5)
        state.staggered = True
        _check(0, state.h)
    h_prev = None
    for _ in range(Q):
        q = state.q
        if energy or probe:
            if q % stride == 0:
                _record(traj, state, probe, MeS, MhS, h_prev, energy)
        state.e = st.e_update(state.e, C.T @ state.h, (q + 1) * dt)
        h_prev = state.h
        state.h = st.h_update(state.h, -(C @ state.e))
        state.q = q + 1
        _check(state.q, state.e, state.h)
    if (energy or probe) and state.q % stride == 0:
        _record(traj, state, probe, MeS, MhS, h_prev, energy)
    return traj


def _record(traj, state, probe, MeS, MhS, h_prev, energy):
    traj.times.append(state.time)
    if energy:
        # h_prev is h^{q-1/2}; before the first full step it is not available
        if h_prev is None:
            traj.energy.append(np.nan)
        else:
            traj.energy.append(float(state.e @ (MeS @ state.e) + h_prev @ (MhS @ state.h)))
    if probe is not None:
        traj.records.append(probe(state.q, state.time, state))


def pml_leapfrog_run(
    state: FieldState,
    Me: BlockDiagMatrix,
    Mh: BlockDiagMatrix,
    C,
    pml: PmlMatrices,
    sigma: float,
    Q: int,
    drive=None,
    probe: Callable | None = None,
    stride: int = 1,
    energy: bool = False,
) -> Trajectory:
    """Damped leap-frog with auxiliary fields on the PML DOFs (in place).

    Six updates per step; the half-step start uses ``h_hat^0`` as given.
    With ``sigma = 0`` every step reproduces :func:`leapfrog_run` exactly.
    """
    dt = state.dt
    De_t, De_h, Dh_t, Dh_h, Re, Rh = pml.as_tuple()
    if state.e_hat is None:
        state.e_hat = np.zeros(Re.shape[0])
    if state.h_hat is None:
        state.h_hat = np.zeros(Rh.shape[0])
    st = _Stepper(Me, Mh, C, dt, _make_drive(Me, drive))
    traj = Trajectory()
    MeS, MhS = (Me.to_sparse(), Mh.to_sparse()) if energy else (None, None)
    s = float(sigma)

    def h_rhs(h, hh, e):
        return s * (Dh_t @ h - Dh_h @ hh) - (C @ e)

    if not state.staggered:
        h0, hh0 = state.h, state.h_hat
        state.h = st.h_update(h0, h_rhs(h0, hh0, state.e), 0.5)
        state.h_hat = hh0 + (0.5 * dt * s) * (Rh @ h0 - hh0)
        state.staggered = True
        _check(0, state.h)
    h_prev = None
    for _ in range(Q):
        q = state.q
        if energy or probe:
            if q % stride == 0:
                _record(traj, state, probe, MeS, MhS, h_prev, energy)
        e, eh = state.e, state.e_hat
        state.e = st.e_update(e, s * (De_t @ e - De_h @ eh) + (C.T @ state.h), (q + 1) * dt)
        state.e_hat = eh + (dt * s) * (Re @ e - eh)
        h_prev, hh = state.h, state.h_hat
        state.h = st.h_update(h_prev, h_rhs(h_prev, hh, state.e))
        state.h_hat = hh + (dt * s) * (Rh @ h_prev - hh)
        state.q = q + 1
        _check(state.q, state.e, state.h, state.e_hat, state.h_hat)
    if (energy or probe) and state.q % stride == 0:
        _record(traj, state, probe, MeS, MhS, h_prev, energy)
    return traj
