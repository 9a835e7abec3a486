"""Independent reference computations used by the tests."""

from __future__ import annotations

import numpy as np

from dualcell.dualgrid import inverse_map, jacobian, map_point
from dualcell.fespace import ELECTRIC, evaluate_global


def _slot_values(space, subcells, s, pts):
    """Physical values of every global DOF touching subcell ``s``: dict dof -> (n, 3)."""
    dofs = np.unique(space.slot_dof[s])
    return {int(d): evaluate_global(space, int(d), subcells, s, pts) for d in dofs}


def conformity_pairs(space, mesh, topo, subcells):
    """``(s1, j1, s2)`` for every internal conformity face of the space.

    ``j1`` is the reference axis of ``s1`` normal to the shared face.
    """
    out = []
    ns = len(subcells)
    if space.kind == ELECTRIC:
        # primal faces shared by two tets, seen from each face vertex
        for f in np.nonzero(~topo.boundary_face)[0]:
            t1, t2 = topo.face_tets[f]
            tri = set(topo.faces[f].tolist())
            for N in tri:
                s1 = 4 * t1 + int(np.nonzero(mesh.tets[t1] == N)[0][0])
                s2 = 4 * t2 + int(np.nonzero(mesh.tets[t2] == N)[0][0])
                ax = subcells.axis_vertices[s1]
                j1 = int(np.nonzero([v not in tri for v in ax])[0][0])
                out.append((s1, j1, s2))
    else:
        # dual faces inside a tet: subcells of N and v_j share the face xhat_j = +1
        for s1 in range(ns):
            t = subcells.tet[s1]
            for j1 in range(3):
                vj = subcells.axis_vertices[s1, j1]
                s2 = 4 * t + int(np.nonzero(mesh.tets[t] == vj)[0][0])
                if s2 > s1:
                    out.append((s1, j1, s2))
    return out


def tangential_jump_matrix(space, mesh, topo, subcells, npts=3, seed=0):
    """Assemble ``sum_faces sum_q [u_m]_t . [u_n]_t`` over internal conformity faces.

    Tangential components are taken along the two face tangents of the first
    subcell; points in the second subcell come from Newton inversion of its
    trilinear map.
    """
    rng = np.random.default_rng(seed)
    N = space.n_dofs
    J = np.zeros((N, N)) if N <= 4000 else None
    max_jump = 0.0
    side = -1.0 if space.kind == ELECTRIC else 1.0
    for s1, j1, s2 in conformity_pairs(space, mesh, topo, subcells):
        sc1, sc2 = subcells[s1], subcells[s2]
        pts1 = rng.uniform(-1, 1, size=(npts, 3))
        pts1[:, j1] = side
        pts2 = np.array([inverse_map(sc2, map_point(sc1, p)) for p in pts1])
        assert np.allclose(np.abs(pts2).max(axis=1) >= 1 - 1e-10, True)
        tang = [np.array([jacobian(sc1, p)[0][:, m] for m in range(3) if m != j1]) for p in pts1]
        v1 = _slot_values(space, subcells, s1, pts1)
        v2 = _slot_values(space, subcells, s2, pts2)
        dofs = sorted(set(v1) | set(v2))
        jumps = {}
        for d in dofs:
            a = v1.get(d, np.zeros((npts, 3)))
            b = v2.get(d, np.zeros((npts, 3)))
            jumps[d] = np.array([tang[q] @ (a[q] - b[q]) for q in range(npts)]).ravel()
            max_jump = max(max_jump, float(np.abs(jumps[d]).max()))
        if J is not None:
            ds = np.array(dofs)
            V = np.array([jumps[d] for d in dofs])
            J[np.ix_(ds, ds)] += V @ V.T
    return J, max_jump


def fd_waveguide(kc, e0, times, xmax=5.0, dx=1 / 400, courant=0.5):
    """Leap-frog for ``e_tt = e_xx - kc^2 e`` on ``[0, xmax]`` with ``e(t, 0) = e0(t)``.

    Returns ``(x, rows)`` with one row per requested time (multiples of the step).
    """
    nx = int(round(xmax / dx))
    x = np.linspace(0.0, xmax, nx + 1)
    dt = courant * dx
    steps = np.rint(np.asarray(times) / dt).astype(int)
    if not np.allclose(steps * dt, times, atol=1e-12):
        raise ValueError("times must be multiples of the step")
    r2 = courant**2
    prev = np.zeros(nx + 1)
    cur = np.zeros(nx + 1)
    cur[0] = e0(dt)
    out = {}
    if 0 in steps:
        out[0] = prev.copy()
    if 1 in steps:
        out[1] = cur.copy()
    for n in range(1, steps.max()):
        nxt = np.empty_like(cur)
        nxt[1:-1] = (2 * cur[1:-1] - prev[1:-1] + r2 * (cur[2:] - 2 * cur[1:-1] + cur[:-2])
                     - (dt * kc) ** 2 * cur[1:-1])
        nxt[0] = e0((n + 1) * dt)
        nxt[-1] = 0.0
        prev, cur = cur, nxt
        if n + 1 in steps:
            out[n + 1] = cur.copy()
    return x, np.array([out[s] for s in steps])


def fd_waveguide_richardson(kc, e0, times, xmax=5.0, dx=1 / 800):
    """Richardson combination of two leap-frog runs on the coarse grid points."""
    x, a = fd_waveguide(kc, e0, times, xmax, dx)
    _, b = fd_waveguide(kc, e0, times, xmax, dx / 2)
    return x, (4 * b[:, ::2] - a) / 3
