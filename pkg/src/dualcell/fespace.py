"""Global numbering of the electric and magnetic tensor-product spaces.

Both spaces use the reference functions ``l_alpha(xhat) e_i`` (electric) or
``l_alpha(-xhat) e_i`` (magnetic) on every subcell, pushed forward with the
covariant Piola map.  A slot ``(i, alpha)`` of a subcell is classified by
the set ``Z = {j != i : alpha_j = 0}``:

* ``Z`` empty: cell-centred, support is the subcell itself;
* ``Z = {j}``: face-centred on the face ``xhat_j = -1`` (electric) or
  ``xhat_j = +1`` (magnetic);
* ``|Z| = 2``: edge-centred on the edge where both those coordinates are
  at the extreme value.

Slots of different subcells are identified through the primal vertices that
span their shared entity, so the per-subcell axis and multi-index of a
shared DOF follow from the corner convention of :mod:`dualcell.dualgrid`.
All orientation signs are +1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dualgrid import SubcellSet
from .mesh import PrimalMesh, TopologyTables
from .polybasis import QuadRule1D, gauss_radau, lagrange_matrix, multi_indices, tensor_basis_values, tensor_gauss

ELECTRIC = "electric"
MAGNETIC = "magnetic"
CELL, FACE, EDGE = 0, 1, 2
CLASS_NAMES = ("cell", "face", "edge")


@dataclass(frozen=True)
class DofSpace:
    """Global DOF tables of one space.

    ``slot_dof[s, i, a]`` is the global id of axis ``i`` and flat multi-index
    ``a`` (C order over ``{0..P}^3``) in subcell ``s``.  ``entity`` holds a
    primal face/edge id for face/edge DOFs (see :func:`build_electric_space`
    and :func:`build_magnetic_space`) and the subcell for cell DOFs.
    """

    kind: str
    order: int
    rule: QuadRule1D
    slot_dof: np.ndarray
    slot_sign: np.ndarray
    dof_class: np.ndarray
    owner: np.ndarray
    entity: np.ndarray
    support_ptr: np.ndarray
    support_subcells: np.ndarray
    rep_slot: np.ndarray

    @property
    def n_dofs(self) -> int:
        return len(self.dof_class)

    @property
    def reflect(self) -> bool:
        return self.kind == MAGNETIC

    def support(self, dof: int) -> np.ndarray:
        return self.support_subcells[self.support_ptr[dof] : self.support_ptr[dof + 1]]

    def support_sizes(self) -> np.ndarray:
        return np.diff(self.support_ptr)

    def class_counts(self) -> dict:
        c = np.bincount(self.dof_class, minlength=3)
        return {name: int(c[k]) for k, name in enumerate(CLASS_NAMES)}

    def slot_nodes(self) -> np.ndarray:
        """Reference node of every ``(i, alpha)`` slot, shape ``((P+1)^3, 3)``.

        The magnetic nodes are reflected.
        """
        pts = self.rule.nodes[multi_indices(self.order)]
        return -pts if self.reflect else pts


def _slot_tables(P: int):
    """Per-slot classification shared by both spaces.

    Returns ``alpha`` ``(n1^3, 3)`` and, for each axis ``i``, ``zmask``
    ``(3, n1^3, 3)`` flagging ``j != i`` with ``alpha_j = 0``.
    """
    alpha = multi_indices(P)
    zmask = np.zeros((3, len(alpha), 3), dtype=bool)
    for i in range(3):
        for j in range(3):
            if j != i:
                zmask[i, :, j] = alpha[:, j] == 0
    return alpha, zmask


def _encode(keys: np.ndarray) -> np.ndarray:
    """Injective int64 encoding of non-negative key rows, or the rows themselves."""
    radix = keys.max(axis=0).astype(object) + 1
    total = 1
    for r in radix:
        total *= int(r)
    if total >= 2**62:
        return None
    out = np.zeros(len(keys), dtype=np.int64)
    for c in range(keys.shape[1]):
        out = out * int(radix[c]) + keys[:, c]
    return out


def _build_space(kind: str, mesh: PrimalMesh, topo: TopologyTables, subcells: SubcellSet, P: int) -> DofSpace:
    if int(P) != P or P < 1:
        raise ValueError(f"polynomial order must be an integer >= 1, got {P!r}")
    P = int(P)
    rule = gauss_radau(P)
    ns = len(subcells)
    n1 = P + 1
    nloc = n1**3
    alpha, zmask = _slot_tables(P)
    axes = subcells.axis_vertices  # (ns, 3)
    owner_of_sub = subcells.vertex if kind == ELECTRIC else subcells.tet

    S = np.repeat(np.arange(ns), 3 * nloc)
    I = np.tile(np.repeat(np.arange(3), nloc), ns)
    A = np.tile(np.arange(nloc), 3 * ns)
    nz = zmask[I, A].sum(axis=1)
    keys = np.zeros((len(S), 6), dtype=np.int64)
    keys[:, 0] = owner_of_sub[S]
    cls = np.where(nz == 0, CELL, np.where(nz == 1, FACE, EDGE))
    keys[:, 1] = cls
    vi = axes[S, I]
    ai = alpha[A, I]
    # cell-centred
    c = cls == CELL
    keys[c, 2] = S[c]
    keys[c, 3] = I[c]
    keys[c, 4] = A[c]
    # face-centred: the tangential partner axis k is the one with alpha_k possibly nonzero
    f = cls == FACE
    zf = zmask[I[f], A[f]]
    jf = np.argmax(zf, axis=1)
    kf = 3 - I[f] - jf
    keys[f, 2] = vi[f]
    keys[f, 3] = ai[f]
    keys[f, 4] = axes[S[f], kf]
    keys[f, 5] = alpha[A[f], kf]
    e = cls == EDGE
    keys[e, 2] = vi[e]
    keys[e, 3] = ai[e]

    code = _encode(keys)
    if code is not None:
        uniq, first, inv = np.unique(code, return_index=True, return_inverse=True)
    else:
        uniq, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    ndof = len(uniq)
    slot_dof = inv.reshape(ns, 3, nloc)
    dof_class = cls[first]
    owner = keys[first, 0]

    # geometric entity of each DOF from a representative slot
    entity = np.empty(ndof, dtype=np.int64)
    rs, ri, ra = S[first], I[first], A[first]
    N = subcells.vertex[rs]
    vrep = axes[rs, ri]
    dc = dof_class
    entity[dc == CELL] = rs[dc == CELL]
    fm = dc == FACE
    zrep = zmask[ri[fm], ra[fm]]
    jrep = np.argmax(zrep, axis=1)
    krep = 3 - ri[fm] - jrep
    if kind == ELECTRIC:
        # primal face {N, v_i, v_k}; primal half-edge on {N, v_i}
        tri = np.stack([N[fm], vrep[fm], axes[rs[fm], krep]], axis=1)
        entity[fm] = topo.face_ids(tri)
        em = dc == EDGE
        entity[em] = topo.edge_ids(np.stack([N[em], vrep[em]], axis=1))
    else:
        # dual face of the primal edge {N, v_j}; dual segment of the face opposite v_i
        entity[fm] = topo.edge_ids(np.stack([N[fm], axes[rs[fm], jrep]], axis=1))
        em = dc == EDGE
        tets = mesh.tets[subcells.tet[rs[em]]]
        opp = np.argmax(tets == vrep[em][:, None], axis=1)
        entity[em] = topo.tet_faces[subcells.tet[rs[em]], opp]

    pair = np.unique(inv.astype(np.int64) * ns + S)
    sup_dof = pair // ns
    sup_sub = pair % ns
    ptr = np.concatenate(([0], np.cumsum(np.bincount(sup_dof, minlength=ndof))))
    return DofSpace(
        kind=kind,
        order=P,
        rule=rule,
        slot_dof=slot_dof,
        slot_sign=np.ones(slot_dof.shape, dtype=np.int8),
        dof_class=dof_class,
        owner=owner,
        entity=entity,
        support_ptr=ptr,
        support_subcells=sup_sub,
        rep_slot=np.stack([rs, ri, ra], axis=1),
    )


def build_electric_space(mesh: PrimalMesh, topo: TopologyTables, subcells: SubcellSet, P: int) -> DofSpace:
    """Dual-cell-conforming space; DOFs are numbered contiguously per dual cell.

    Face DOFs live on primal faces (entity = primal face id), edge DOFs on
    primal half-edges (entity = primal edge id; the owner picks the half).
    """
    return _build_space(ELECTRIC, mesh, topo, subcells, P)


def build_magnetic_space(mesh: PrimalMesh, topo: TopologyTables, subcells: SubcellSet, P: int) -> DofSpace:
    """Tet-conforming space; DOFs are numbered contiguously per tet.

    Face DOFs live on dual faces (entity = primal edge id; owner = tet), edge
    DOFs on dual segments (entity = primal face id; owner = tet).
    """
    return _build_space(MAGNETIC, mesh, topo, subcells, P)


def evaluate_global(space: DofSpace, dof: int, subcells: SubcellSet, s: int, xhat) -> np.ndarray:
    """Physical value of a global basis function at reference points of subcell ``s``.

    ``xhat`` is ``(3,)`` or ``(n, 3)``; the result has the matching shape.
    Zero when ``s`` is outside the support.
    """
    pts = np.atleast_2d(np.asarray(xhat, dtype=float))
    out = np.zeros((len(pts), 3))
    hit = np.argwhere(space.slot_dof[s] == dof)
    if len(hit):
        alpha = multi_indices(space.order)
        J = _jac_one(subcells, s, pts)
        q = -pts if space.reflect else pts
        L = [lagrange_matrix(space.rule, q[:, d]) for d in range(3)]
        for i, a in hit:
            val = L[0][:, alpha[a, 0]] * L[1][:, alpha[a, 1]] * L[2][:, alpha[a, 2]]
            vhat = np.zeros((len(pts), 3))
            vhat[:, i] = val * space.slot_sign[s, i, a]
            out += np.linalg.solve(np.transpose(J, (0, 2, 1)), vhat[:, :, None])[:, :, 0]
    return out[0] if np.ndim(xhat) == 1 else out


def _jac_one(subcells: SubcellSet, s: int, pts: np.ndarray) -> np.ndarray:
    sub = SubcellSet(subcells.corners[s : s + 1])
    return sub.jacobians(pts)[0]


@dataclass(frozen=True)
class BoundaryConstraint:
    """Electric DOFs removed by the wall condition and the injection of the rest.

    ``prescribed`` lists DOFs kept out of the unknowns but driven by a source
    (empty unless a patch is excluded from the wall).
    """

    n_full: int
    eliminated: np.ndarray
    free: np.ndarray
    prescribed: np.ndarray

    @property
    def n_free(self) -> int:
        return len(self.free)

    def injection(self) -> sp.csr_matrix:
        """``n_full x n_free`` 0/1 matrix extending free coefficients by zero."""
        n = self.n_free
        return sp.csr_matrix((np.ones(n), (self.free, np.arange(n))), shape=(self.n_full, n))

    def extend(self, x_free: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_full)
        out[self.free] = x_free
        return out


def apply_electric_wall(space: DofSpace, topo: TopologyTables, keep_faces=None) -> BoundaryConstraint:
    """Eliminate face/edge DOFs whose entity lies on the boundary.

    Args:
        keep_faces: optional boolean mask over primal faces.  Boundary faces
            flagged there are not walls; their face DOFs, and edge DOFs on
            edges not shared with a wall face, are returned as ``prescribed``
            and stay in ``free``.
    """
    if space.kind != ELECTRIC:
        raise ValueError("the electric wall applies to the electric space only")
    wall_face = topo.boundary_face.copy()
    if keep_faces is not None:
        keep_faces = np.asarray(keep_faces, dtype=bool)
        if (keep_faces & ~topo.boundary_face).any():
            raise ValueError("kept faces must lie on the boundary")
        wall_face &= ~keep_faces
    wall_edge = np.zeros(len(topo.edges), dtype=bool)
    fe = _face_edges(topo)
    wall_edge[fe[wall_face].ravel()] = True
    f = space.dof_class == FACE
    e = space.dof_class == EDGE
    elim = np.zeros(space.n_dofs, dtype=bool)
    elim[f] = wall_face[space.entity[f]]
    elim[e] = wall_edge[space.entity[e]]
    pres = np.zeros(space.n_dofs, dtype=bool)
    if keep_faces is not None:
        keep_edge = np.zeros(len(topo.edges), dtype=bool)
        keep_edge[fe[keep_faces].ravel()] = True
        pres[f] = keep_faces[space.entity[f]]
        pres[e] = keep_edge[space.entity[e]] & ~wall_edge[space.entity[e]]
    return BoundaryConstraint(
        n_full=space.n_dofs,
        eliminated=np.nonzero(elim)[0],
        free=np.nonzero(~elim)[0],
        prescribed=np.nonzero(pres)[0],
    )


def _face_edges(topo: TopologyTables) -> np.ndarray:
    F = topo.faces
    pairs = np.stack([F[:, [0, 1]], F[:, [0, 2]], F[:, [1, 2]]], axis=1)
    return topo.edge_ids(pairs.reshape(-1, 2)).reshape(-1, 3)


def dof_nodes(space: DofSpace, subcells: SubcellSet) -> tuple[np.ndarray, np.ndarray]:
    """Physical node and covariant direction ``dx/dxhat_i`` of every DOF.

    Taken from the representative slot; for shared DOFs all slots give the
    same point and the same tangential direction.
    """
    nodes = space.slot_nodes()
    rs, ri, ra = space.rep_slot.T
    from .dualgrid import _shape, _shape_grad

    ref = nodes[ra]
    phi = _shape(ref)
    dphi = _shape_grad(ref)
    X = np.einsum("nc,ncd->nd", phi, subcells.corners[rs])
    J = np.einsum("ncm,ncd->ndm", dphi, subcells.corners[rs])
    tangent = J[np.arange(len(rs)), :, ri]
    return X, tangent


def interpolate(space: DofSpace, subcells: SubcellSet, field) -> np.ndarray:
    """Nodal interpolant: coefficient = ``field(x) . dx/dxhat_i`` at the DOF node.

    ``field`` maps points ``(n, 3)`` to vectors ``(n, 3)``.  For shared DOFs
    the value is taken in the representative subcell; for fields with
    continuous tangential trace this is independent of the choice.
    """
    X, T = dof_nodes(space, subcells)
    return np.einsum("nd,nd->n", np.asarray(field(X), dtype=float), T)


def write_dof_table(path, space: DofSpace) -> None:
    """CSV dump: dof, kind, class, owner, entity, support subcells."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dof", "kind", "class", "owner", "entity", "support"])
        for d in range(space.n_dofs):
            sup = " ".join(map(str, space.support(d)))
            w.writerow([d, space.kind, CLASS_NAMES[space.dof_class[d]], space.owner[d], space.entity[d], sup])


class FieldSampler:
    """Evaluates a discrete field at tensor Gauss points of selected subcells.

    Used for L2 norms and errors on a fixed quadrature grid: ``npts`` Gauss
    points per direction and subcell.
    """

    def __init__(self, space: DofSpace, subcells: SubcellSet, select=None, npts: int | None = None):
        self.space = space
        sel = np.arange(len(subcells)) if select is None else np.asarray(select)
        if sel.dtype == bool:
            sel = np.nonzero(sel)[0]
        self.select = sel
        npts = npts or space.order + 2
        pts, w = tensor_gauss(npts)
        sub = SubcellSet(subcells.corners[sel])
        J = sub.jacobians(pts)
        self.points = sub.map_points(pts)
        self.weights = w[None, :] * np.abs(np.linalg.det(J))
        self.JinvT = np.linalg.inv(J).transpose(0, 1, 3, 2)
        self.basis = tensor_basis_values(space.rule, pts, reflect=space.reflect)
        self.dofs = space.slot_dof[sel]
        self.signs = space.slot_sign[sel].astype(float)

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        """Field values ``(n_sub, n_q, 3)`` for full (not constrained) coefficients."""
        X = coeffs[self.dofs] * self.signs
        vhat = np.einsum("qa,sia->sqi", self.basis, X)
        return np.einsum("sqij,sqj->sqi", self.JinvT, vhat)

    def norm_sq(self, vals: np.ndarray) -> float:
        return float(np.einsum("sq,sqi,sqi->", self.weights, vals, vals))
