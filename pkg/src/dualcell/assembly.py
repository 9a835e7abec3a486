"""Mass, curl and PML matrices of the dual cell discretisation.

The curl pairing of a magnetic slot ``(i, alpha)`` with an electric slot
``(j, beta)`` on the reference cube is geometry free; it is computed once
per order and scattered through the DOF tables.  Mass matrices carry all
geometry and material information.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy.sparse import csgraph

from .dualgrid import SubcellSet
from .fespace import ELECTRIC, BoundaryConstraint, DofSpace
from .polybasis import (
    QuadRule1D,
    gauss_legendre,
    gauss_radau,
    lagrange_deriv_matrix,
    lagrange_matrix,
    multi_indices,
    tensor_basis_gradients,
    tensor_basis_values,
    tensor_gauss,
)

LEVI = np.zeros((3, 3, 3))
LEVI[0, 1, 2] = LEVI[1, 2, 0] = LEVI[2, 0, 1] = 1.0
LEVI[0, 2, 1] = LEVI[2, 1, 0] = LEVI[1, 0, 2] = -1.0

SNAP_REL = 1e-14
DROP_REL = 1e-13


class AssemblyError(ValueError):
    pass


# --------------------------------------------------------------------------- materials


@dataclass
class MaterialSpec:
    """Per-region constant tensors (or callables ``x -> (n, 3, 3)``) for eps and mu.

    Regions missing from the maps get the identity.
    """

    eps: dict = field(default_factory=dict)
    mu: dict = field(default_factory=dict)

    @staticmethod
    def _as_tensor(v):
        if callable(v):
            return v
        a = np.asarray(v, dtype=float)
        if a.ndim == 0:
            return a * np.eye(3)
        if a.shape == (3,):
            return np.diag(a)
        return a

    def evaluate(self, which: str, regions: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Tensor at ``points[s, q]`` of subcells with tet region ``regions[s]``.

        Returns ``(ns, nq, 3, 3)``.  Raises :class:`AssemblyError` on a
        non-symmetric or non-positive sample.
        """
        table = self.eps if which == "eps" else self.mu
        ns, nq = points.shape[:2]
        out = np.broadcast_to(np.eye(3), (ns, nq, 3, 3)).copy()
        for reg, val in table.items():
            sel = regions == reg
            if not sel.any():
                continue
            t = self._as_tensor(val)
            if callable(t):
                vals = np.asarray(t(points[sel].reshape(-1, 3)), dtype=float).reshape(-1, nq, 3, 3)
            else:
                vals = np.broadcast_to(t, (int(sel.sum()), nq, 3, 3))
            out[sel] = vals
        if table:
            if not np.allclose(out, np.swapaxes(out, -1, -2), rtol=1e-12, atol=1e-14):
                raise AssemblyError(f"{which} is not symmetric")
            if np.linalg.eigvalsh(out.reshape(-1, 3, 3)).min() <= 0:
                raise AssemblyError(f"{which} is not positive definite")
        return out


# --------------------------------------------------------------------------- block-diagonal matrices


class BlockDiagMatrix:
    """Symmetric positive definite matrix made of small dense blocks.

    Blocks are the connected components of the sparsity graph, grouped by
    size so that factorisation is batched.  ``cell`` gives for every block
    the dual cell / tet owning it (``-1`` if unknown).
    """

    def __init__(self, n: int, groups: list, cell=None):
        self.n = n
        self.groups = groups  # list of (idx (nb, b), data (nb, b, b))
        self.n_blocks = sum(len(g[0]) for g in groups)
        self.cell = np.full(self.n_blocks, -1) if cell is None else np.asarray(cell)
        self._factor()

    @classmethod
    def from_sparse(cls, M: sp.spmatrix, owner=None) -> "BlockDiagMatrix":
        M = sp.csr_matrix(M)
        n = M.shape[0]
        ncomp, lab = csgraph.connected_components(M, directed=False)
        order = np.argsort(lab, kind="stable")
        sizes = np.bincount(lab, minlength=ncomp)
        start = np.concatenate(([0], np.cumsum(sizes)))
        groups = []
        cells = []
        for b in np.unique(sizes):
            comps = np.nonzero(sizes == b)[0]
            idx = order[start[comps][:, None] + np.arange(b)[None, :]]
            sub = idx.ravel()
            dense = M[sub][:, sub]
            # pick the diagonal blocks out of the gathered matrix
            rows = np.repeat(np.arange(len(comps)), b)
            blocks = np.zeros((len(comps), b, b))
            dense = dense.tocoo()
            keep = rows[dense.row] == rows[dense.col]
            blocks[rows[dense.row[keep]], dense.row[keep] % b, dense.col[keep] % b] = dense.data[keep]
            groups.append((idx, blocks))
            cells.append(owner[idx[:, 0]] if owner is not None else np.full(len(comps), -1))
        return cls(n, groups, np.concatenate(cells) if cells else None)

    def _factor(self):
        self.chol = []
        for idx, blk in self.groups:
            try:
                L = np.linalg.cholesky(blk)
            except np.linalg.LinAlgError as exc:
                raise AssemblyError("mass block is not positive definite") from exc
            self.chol.append(L)
        self.inv_csr = self._to_csr([np.linalg.inv(b) for _, b in self.groups])
        self.Linv_csr = self._to_csr([_batched_tri_inv(L) for L in self.chol])
        self.L_csr = self._to_csr(self.chol)

    def _to_csr(self, datas) -> sp.csr_matrix:
        r, c, v = [], [], []
        for (idx, _), d in zip(self.groups, datas):
            b = idx.shape[1]
            r.append(np.repeat(idx, b, axis=1).ravel())
            c.append(np.tile(idx, (1, b)).ravel())
            v.append(np.asarray(d).ravel())
        if not r:
            return sp.csr_matrix((self.n, self.n))
        m = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(self.n, self.n))
        m.eliminate_zeros()
        return m

    def to_sparse(self) -> sp.csr_matrix:
        return self._to_csr([b for _, b in self.groups])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_sparse() @ x

    def solve(self, x: np.ndarray) -> np.ndarray:
        return self.inv_csr @ x

    def block_sizes(self) -> np.ndarray:
        return np.concatenate([np.full(len(idx), idx.shape[1]) for idx, _ in self.groups])

    def restrict(self, keep: np.ndarray) -> "BlockDiagMatrix":
        """Principal submatrix on the index set ``keep`` (sorted)."""
        M = self.to_sparse()[keep][:, keep]
        return BlockDiagMatrix.from_sparse(M)


def _batched_tri_inv(L: np.ndarray) -> np.ndarray:
    b = L.shape[-1]
    eye = np.broadcast_to(np.eye(b), L.shape)
    return np.linalg.solve(L, eye)


# --------------------------------------------------------------------------- mass matrices


def _region_of(subcells: SubcellSet, regions) -> np.ndarray:
    if regions is None:
        return np.zeros(len(subcells), dtype=np.int64)
    return np.asarray(regions)[subcells.tet]


def lumped_blocks(subcells: SubcellSet, rule: QuadRule1D, reflect: bool, tensor: np.ndarray, proj=None) -> np.ndarray:
    """``W_a |J| J^-1 T J^-T`` at every (subcell, node); shape ``(ns, (P+1)^3, 3, 3)``.

    ``tensor`` has shape ``(ns, nq, 3, 3)``; ``proj`` optionally replaces it
    (PML projectors, constant ``(3, 3)``).
    """
    idx = multi_indices(rule.order)
    pts = rule.nodes[idx]
    if reflect:
        pts = -pts
    W = np.prod(rule.weights[idx], axis=1)
    J = subcells.jacobians(pts)
    det = np.linalg.det(J)
    if (det <= 0).any():
        raise AssemblyError("inverted subcell")
    Jinv = np.linalg.inv(J)
    T = tensor if proj is None else np.broadcast_to(proj, J.shape)
    return (W[None, :, None, None] * det[..., None, None]) * (Jinv @ T @ np.swapaxes(Jinv, -1, -2))


def consistent_local(subcells: SubcellSet, rule: QuadRule1D, reflect: bool, tensor_fn, npts=None) -> np.ndarray:
    """Dense local mass per subcell by Gauss quadrature; ``(ns, 3 n, 3 n)`` with ``n = (P+1)^3``.

    ``tensor_fn(points (ns, nq, 3)) -> (ns, nq, 3, 3)``.
    """
    npts = rule.order + 2 if npts is None else npts
    pts, w = tensor_gauss(npts)
    phi = tensor_basis_values(rule, pts, reflect=reflect)  # (nq, n)
    J = subcells.jacobians(pts)
    det = np.linalg.det(J)
    if (det <= 0).any():
        raise AssemblyError("inverted subcell")
    Jinv = np.linalg.inv(J)
    T = tensor_fn(subcells.map_points(pts))
    G = (w[None, :, None, None] * det[..., None, None]) * (Jinv @ T @ np.swapaxes(Jinv, -1, -2))
    # M[s, i, a, j, b] = sum_q G[s,q,i,j] phi[q,a] phi[q,b]
    M = np.einsum("sqij,qa,qb->siajb", G, phi, phi, optimize=True)
    n = phi.shape[1]
    return M.reshape(len(subcells), 3 * n, 3 * n)


def assemble_mass(
    space: DofSpace,
    subcells: SubcellSet,
    materials: MaterialSpec | None = None,
    mode: str = "lumped",
    regions=None,
    constraint: BoundaryConstraint | None = None,
) -> BlockDiagMatrix:
    """Mass matrix of ``space`` (eps for the electric space, mu for the magnetic one).

    ``mode='lumped'`` integrates with the (reflected) Radau nodes, which
    leaves only same-node couplings; ``mode='consistent'`` uses Gauss
    quadrature with ``P + 2`` points per direction.
    """
    materials = materials or MaterialSpec()
    which = "eps" if space.kind == ELECTRIC else "mu"
    reg = _region_of(subcells, regions)
    rule = space.rule
    ns = len(subcells)
    n = (space.order + 1) ** 3
    if mode == "lumped":
        pts = space.slot_nodes()
        tens = materials.evaluate(which, reg, subcells.map_points(pts))
        B = lumped_blocks(subcells, rule, space.reflect, tens)  # (ns, n, 3, 3)
        dofs = space.slot_dof  # (ns, 3, n)
        rows = np.broadcast_to(np.transpose(dofs, (0, 2, 1))[:, :, :, None], (ns, n, 3, 3))
        cols = np.broadcast_to(np.transpose(dofs, (0, 2, 1))[:, :, None, :], (ns, n, 3, 3))
        M = sp.csr_matrix((B.ravel(), (rows.ravel(), cols.ravel())), shape=(space.n_dofs,) * 2)
    elif mode == "consistent":
        loc = consistent_local(subcells, rule, space.reflect, lambda x: materials.evaluate(which, reg, x))
        d = space.slot_dof.reshape(ns, 3 * n)
        rows = np.broadcast_to(d[:, :, None], loc.shape)
        cols = np.broadcast_to(d[:, None, :], loc.shape)
        M = sp.csr_matrix((loc.ravel(), (rows.ravel(), cols.ravel())), shape=(space.n_dofs,) * 2)
        scale = np.abs(M.data).max() if M.nnz else 0.0
        M.data[np.abs(M.data) <= SNAP_REL * scale] = 0.0
    else:
        raise ValueError(f"unknown mass mode {mode!r}")
    M.eliminate_zeros()
    owner = space.owner
    if constraint is not None:
        M = M[constraint.free][:, constraint.free]
        owner = owner[constraint.free]
    return BlockDiagMatrix.from_sparse(M, owner=owner)


# --------------------------------------------------------------------------- curl


@dataclass(frozen=True)
class ReferenceTables:
    """Geometry-free curl pairings on the reference cube.

    ``curl[(i, a), (j, b)]`` pairs the magnetic slot ``(i, a)`` with the
    electric slot ``(j, b)`` (rows magnetic, flat index ``i * n + a``);
    ``A``, ``G`` are the 1D factors it is built from.
    """

    order: int
    A: np.ndarray
    G: np.ndarray
    curl: np.ndarray


def _snap(T: np.ndarray) -> np.ndarray:
    T = T.copy()
    T[np.abs(T) < SNAP_REL * np.abs(T).max()] = 0.0
    return T


@lru_cache(maxsize=16)
def precompute_reference_tables(P: int) -> ReferenceTables:
    """Curl pairings for order ``P``.

    With ``k`` the third axis, the entry for magnetic ``(i, a)`` and
    electric ``(j, b)`` is ``eps_ijk G[a_k, b_k] prod_{m != k} A[a_m, b_m]``,
    where ``A[a, b] = int l_a(-x) l_b(x)`` and ``G`` collects the volume
    term and the jump on the ``x_k = -1`` face.
    """
    rule = gauss_radau(P)
    x, w = gauss_legendre(P + 2)
    Lp = lagrange_matrix(rule, x)
    Lm = lagrange_matrix(rule, -x)
    Dm = lagrange_deriv_matrix(rule, -x)
    A = np.einsum("q,qa,qb->ab", w, Lm, Lp)
    # traces on the x = -1 face: magnetic l_a(1), electric l_b(-1)
    left_h = lagrange_matrix(rule, np.array([1.0]))[0]
    left_e = lagrange_matrix(rule, np.array([-1.0]))[0]
    G = np.einsum("q,qa,qb->ab", w, -Dm, Lp) + np.outer(left_h, left_e)
    idx = multi_indices(P)
    n = len(idx)
    curl = np.zeros((3, n, 3, n))
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            k = 3 - i - j
            fac = G[idx[:, None, k], idx[None, :, k]]
            for m in range(3):
                if m != k:
                    fac = fac * A[idx[:, None, m], idx[None, :, m]]
            curl[i, :, j, :] = LEVI[i, j, k] * fac
    return ReferenceTables(order=P, A=A, G=G, curl=_snap(curl.reshape(3 * n, 3 * n)))


@lru_cache(maxsize=16)
def dual_reference_table(P: int) -> np.ndarray:
    """Pairing of electric ``(j, b)`` rows with magnetic ``(i, a)`` columns.

    Evaluated from its own definition by tensor Gauss quadrature: the
    volume integral of ``curl E . H`` minus the ``E x H . n`` flux through
    the three ``x_k = +1`` faces.
    """
    rule = gauss_radau(P)
    npts = P + 2
    pts, w = tensor_gauss(npts)
    phi_e = tensor_basis_values(rule, pts)
    grad_e = tensor_basis_gradients(rule, pts)
    phi_h = tensor_basis_values(rule, pts, reflect=True)
    n = phi_e.shape[1]
    out = np.zeros((3, n, 3, n))
    for j in range(3):
        # curl(phi e_j) = grad phi x e_j; vectors over (q, b, 3)
        curl_e = np.cross(grad_e, np.broadcast_to(np.eye(3)[j], grad_e.shape))
        for i in range(3):
            out[j, :, i, :] += np.einsum("q,qb,qa->ba", w, curl_e[:, :, i], phi_h)
    # faces x_k = +1, outward normal e_k
    x1, w1 = gauss_legendre(npts)
    X, Y = np.meshgrid(x1, x1, indexing="ij")
    W2 = np.outer(w1, w1).ravel()
    for k in range(3):
        fp = np.ones((len(W2), 3))
        rest = [m for m in range(3) if m != k]
        fp[:, rest[0]] = X.ravel()
        fp[:, rest[1]] = Y.ravel()
        pe = tensor_basis_values(rule, fp)
        ph = tensor_basis_values(rule, fp, reflect=True)
        normal = np.eye(3)[k]
        for j in range(3):
            for i in range(3):
                flux = np.dot(np.cross(np.eye(3)[j], np.eye(3)[i]), normal)
                if flux != 0.0:
                    out[j, :, i, :] -= flux * np.einsum("q,qb,qa->ba", W2, pe, ph)
    return _snap(out.reshape(3 * n, 3 * n))


def _drop_small(M: sp.csr_matrix) -> sp.csr_matrix:
    M = sp.csr_matrix(M)
    M.sum_duplicates()
    if M.nnz:
        M.data[np.abs(M.data) <= DROP_REL * np.abs(M.data).max()] = 0.0
    M.eliminate_zeros()
    M.sort_indices()
    return M


def _scatter_table(table: np.ndarray, row_dofs: np.ndarray, col_dofs: np.ndarray, shape) -> sp.csr_matrix:
    r, c = np.nonzero(table)
    vals = table[r, c]
    ns = row_dofs.shape[0]
    rows = row_dofs[:, r].ravel()
    cols = col_dofs[:, c].ravel()
    data = np.broadcast_to(vals, (ns, len(vals))).ravel()
    return _drop_small(sp.coo_matrix((data, (rows, cols)), shape=shape))


def _check_pair(e_space: DofSpace, h_space: DofSpace):
    if e_space.kind != ELECTRIC or h_space.kind == ELECTRIC:
        raise AssemblyError("expected (electric, magnetic) spaces")
    if e_space.slot_dof.shape != h_space.slot_dof.shape:
        raise AssemblyError("spaces built on different subcell sets or orders")


def assemble_curl(e_space: DofSpace, h_space: DofSpace, constraint: BoundaryConstraint | None = None) -> sp.csr_matrix:
    """``C`` (magnetic x electric) from the reference table; no geometry enters."""
    _check_pair(e_space, h_space)
    ns = e_space.slot_dof.shape[0]
    T = precompute_reference_tables(e_space.order).curl
    C = _scatter_table(
        T, h_space.slot_dof.reshape(ns, -1), e_space.slot_dof.reshape(ns, -1), (h_space.n_dofs, e_space.n_dofs)
    )
    if constraint is not None:
        C = _drop_small(C[:, constraint.free])
    return C


def assemble_curl_dual(e_space: DofSpace, h_space: DofSpace, constraint: BoundaryConstraint | None = None) -> sp.csr_matrix:
    """``C~`` (electric x magnetic) from its own entry formula."""
    _check_pair(e_space, h_space)
    ns = e_space.slot_dof.shape[0]
    T = dual_reference_table(e_space.order)
    Ct = _scatter_table(
        T, e_space.slot_dof.reshape(ns, -1), h_space.slot_dof.reshape(ns, -1), (e_space.n_dofs, h_space.n_dofs)
    )
    if constraint is not None:
        Ct = _drop_small(Ct[constraint.free])
    return Ct


class CurlOperator:
    """Matrix-free application of ``C`` and ``C^T``.

    Uses the tensor structure of the reference pairing: for the axis pair
    ``(i, j)`` with third axis ``k`` the local block is ``G`` along ``k`` and
    ``A`` along the other two directions, so one application costs three 1D
    contractions per subcell.  Gathers and scatters go through 0/1 sparse
    matrices.  Equivalent to :func:`assemble_curl` with the same constraint;
    inputs may be vectors or ``(n, k)`` blocks.
    """

    def __init__(self, e_space: DofSpace, h_space: DofSpace, constraint: BoundaryConstraint | None = None):
        _check_pair(e_space, h_space)
        ns = e_space.slot_dof.shape[0]
        tabs = precompute_reference_tables(e_space.order)
        self.n1 = e_space.order + 1
        self.A, self.G = tabs.A, tabs.G
        self.ns = ns
        nslot = self.n_slots = ns * 3 * self.n1**3
        h_slots = h_space.slot_dof.reshape(-1)
        e_slots = e_space.slot_dof.reshape(-1)
        if constraint is not None:
            full_to_free = np.full(e_space.n_dofs, -1, dtype=np.int64)
            full_to_free[constraint.free] = np.arange(constraint.n_free)
            self.n_e = constraint.n_free
            e_slots = full_to_free[e_slots]
        else:
            self.n_e = e_space.n_dofs
        self.n_h = h_space.n_dofs
        live = e_slots >= 0
        # gather matrices map global coefficients to per-slot values
        self.Ge = sp.csr_matrix(
            (np.ones(int(live.sum())), (np.nonzero(live)[0], e_slots[live])), shape=(nslot, self.n_e)
        )
        self.Gh = sp.csr_matrix((np.ones(nslot), (np.arange(nslot), h_slots)), shape=(nslot, self.n_h))
        self.GeT = self.Ge.T.tocsr()
        self.GhT = self.Gh.T.tocsr()
        self.shape = (self.n_h, self.n_e)

    def _local(self, X: np.ndarray, transpose: bool) -> np.ndarray:
        """Apply the reference pairing to slot values ``X`` of shape ``(ns, 3, n, n, n, K)``."""
        A = self.A.T if transpose else self.A
        G = self.G.T if transpose else self.G
        out = np.zeros_like(X)
        for k in range(3):
            i, j = [m for m in range(3) if m != k]
            # rows are magnetic (i, alpha); eps_ijk for input axis j -> output i, opposite sign for j -> i
            sign = LEVI[i, j, k] if not transpose else LEVI[j, i, k]
            Y = X[:, [j, i]]
            for d in range(3):
                M = G if d == k else A
                Y = np.moveaxis(np.tensordot(M, Y, axes=([1], [2 + d])), 0, 2 + d)
            out[:, i] += sign * Y[:, 0]
            out[:, j] -= sign * Y[:, 1]
        return out

    def _apply(self, x, gather, scatter, transpose):
        x = np.asarray(x, dtype=float)
        vec = x.ndim == 1
        X = gather @ (x[:, None] if vec else x)
        K = X.shape[1]
        n1 = self.n1
        X = X.reshape(self.ns, 3, n1, n1, n1, K)
        Y = self._local(X, transpose).reshape(-1, K)
        out = scatter @ Y
        return out[:, 0] if vec else out

    def matvec(self, e: np.ndarray) -> np.ndarray:
        """``C e``."""
        return self._apply(e, self.Ge, self.GhT, False)

    def rmatvec(self, h: np.ndarray) -> np.ndarray:
        """``C^T h``."""
        return self._apply(h, self.Gh, self.GeT, True)

    def __matmul__(self, x):
        return self.matvec(x)

    @property
    def T(self):
        return _Transposed(self)


class _Transposed:
    def __init__(self, op: CurlOperator):
        self.op = op
        self.shape = op.shape[::-1]

    def __matmul__(self, x):
        return self.op.rmatvec(x)


# --------------------------------------------------------------------------- PML


@dataclass(frozen=True)
class PmlSpec:
    """Damping ``sigma`` along ``axis`` (0, 1, 2) inside the given intervals."""

    axis: int = 0
    intervals: tuple = ()
    sigma: float = 5.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")


@dataclass(frozen=True)
class PmlMatrices:
    De_tilde: sp.csr_matrix
    De_hat: sp.csr_matrix
    Dh_tilde: sp.csr_matrix
    Dh_hat: sp.csr_matrix
    Re: sp.csr_matrix
    Rh: sp.csr_matrix
    pml_tets: np.ndarray

    def as_tuple(self):
        return (self.De_tilde, self.De_hat, self.Dh_tilde, self.Dh_hat, self.Re, self.Rh)


def pml_tets(mesh, pml: PmlSpec, tol: float = 1e-12) -> np.ndarray:
    """Boolean mask of tets inside the PML intervals; they must align with tet faces."""
    lo, hi = mesh.bounding_box()
    x = mesh.vertices[mesh.tets][:, :, pml.axis]
    inside = np.zeros(mesh.n_tets, dtype=bool)
    for a, b in pml.intervals:
        if a < lo[pml.axis] - tol or b > hi[pml.axis] + tol:
            raise AssemblyError("PML interval outside the mesh")
        full = (x >= a - tol).all(axis=1) & (x <= b + tol).all(axis=1)
        cut = (x.max(axis=1) > a + tol) & (x.min(axis=1) < b - tol) & ~full
        if cut.any():
            raise AssemblyError(f"PML interval ({a}, {b}) cuts tet {int(np.nonzero(cut)[0][0])}")
        inside |= full
    return inside


def _pml_pair(space: DofSpace, subcells: SubcellSet, sub_mask: np.ndarray, axis: int, keep):
    P1 = np.zeros((3, 3))
    P1[axis, axis] = 1.0
    sel = np.nonzero(sub_mask)[0]
    n = (space.order + 1) ** 3
    N = space.n_dofs
    out = []
    for proj in (P1 - (np.eye(3) - P1), P1):
        if len(sel) == 0:
            out.append(sp.csr_matrix((N, N)))
            continue
        sub = SubcellSet(subcells.corners[sel])
        B = lumped_blocks(sub, space.rule, space.reflect, None, proj=proj)
        d = np.transpose(space.slot_dof[sel], (0, 2, 1))
        rows = np.broadcast_to(d[:, :, :, None], (len(sel), n, 3, 3))
        cols = np.broadcast_to(d[:, :, None, :], (len(sel), n, 3, 3))
        M = sp.csr_matrix((B.ravel(), (rows.ravel(), cols.ravel())), shape=(N, N))
        M.eliminate_zeros()
        out.append(M)
    touched = np.zeros(N, dtype=bool)
    touched[space.slot_dof[sel].ravel()] = True
    if keep is not None:
        out = [m[keep][:, keep] for m in out]
        touched = touched[keep]
    ids = np.nonzero(touched)[0]
    R = sp.csr_matrix((np.ones(len(ids)), (np.arange(len(ids)), ids)), shape=(len(ids), len(touched)))
    Dt, Dh_full = out
    return sp.csr_matrix(Dt), sp.csr_matrix(Dh_full @ R.T), R


def assemble_pml(
    mesh,
    e_space: DofSpace,
    h_space: DofSpace,
    subcells: SubcellSet,
    pml: PmlSpec,
    constraint: BoundaryConstraint | None = None,
) -> PmlMatrices:
    """Damping and restriction matrices for the auxiliary-field PML.

    ``D~ = int (P1 - P1perp) u.v`` and ``D^ = int P1 u.v R^T`` over PML
    subcells with the lumped quadrature of each space; ``R`` selects the
    DOFs whose support meets the PML.
    """
    tets = pml_tets(mesh, pml)
    sub_mask = tets[subcells.tet]
    keep = constraint.free if constraint is not None else None
    De_t, De_h, Re = _pml_pair(e_space, subcells, sub_mask, pml.axis, keep)
    Dh_t, Dh_h, Rh = _pml_pair(h_space, subcells, sub_mask, pml.axis, None)
    return PmlMatrices(De_t, De_h, Dh_t, Dh_h, Re, Rh, tets)


# --------------------------------------------------------------------------- reports


def nnz_per_row(M) -> float:
    M = M.to_sparse() if isinstance(M, BlockDiagMatrix) else sp.csr_matrix(M)
    return M.nnz / M.shape[0]


def sparsity_row(M) -> dict:
    M = M.to_sparse() if isinstance(M, BlockDiagMatrix) else sp.csr_matrix(M)
    counts = np.diff(M.indptr)
    return {
        "rows": M.shape[0],
        "nnz": int(M.nnz),
        "nnz_per_row": M.nnz / M.shape[0],
        "hist": np.bincount(counts),
    }


def export_matrix_market(path, M, comment: str = "") -> None:
    M = M.to_sparse() if isinstance(M, BlockDiagMatrix) else sp.coo_matrix(M)
    scipy.io.mmwrite(path, M, comment=comment)
