"""Barycentric dual complex and the hexahedral subcells ``K = T ∩ T~``.

Each tet ``T`` with vertex ``N`` contributes one subcell.  Its reference
axes point from ``N`` along the three tet edges at ``N``; the other three
vertices are taken in ascending global index and the last two are swapped
if that frame is left-handed.  The corner with reference bits
``(b0, b1, b2)`` (bit set means ``xhat_m = +1``) is the barycentre of ``N``
together with the axis vertices whose bit is set, so ``(-1,-1,-1)`` is the
primal node and ``(1,1,1)`` the tet barycentre.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import LOCAL_EDGES, LOCAL_FACES, MeshError, PrimalMesh, TopologyTables
from .vtk import HEX_CORNER_ORDER, VTK_HEXAHEDRON, VTK_LINE, VTK_QUAD, write_unstructured_grid

CORNER_BITS = np.array([[(c >> m) & 1 for m in range(3)] for c in range(8)])
CORNER_SIGNS = 2.0 * CORNER_BITS - 1.0


@dataclass(frozen=True)
class DualComplex:
    """Dual vertices, dual-edge segments, dual-face quads and dual cells."""

    vertices: np.ndarray
    segment_tet: np.ndarray
    segment_face: np.ndarray
    segments: np.ndarray
    quad_tet: np.ndarray
    quad_edge: np.ndarray
    quads: np.ndarray
    cell_ptr: np.ndarray
    cell_subcells: np.ndarray
    face_centers: np.ndarray
    edge_centers: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.cell_ptr) - 1

    def cell(self, vertex: int) -> np.ndarray:
        """Subcell ids forming the dual cell of a primal vertex."""
        return self.cell_subcells[self.cell_ptr[vertex] : self.cell_ptr[vertex + 1]]


def build_dual(mesh: PrimalMesh, topo: TopologyTables) -> DualComplex:
    V = mesh.vertices
    tets = mesh.tets
    nt = len(tets)
    bary = V[tets].mean(axis=1)
    face_c = V[topo.faces].mean(axis=1)
    edge_c = V[topo.edges].mean(axis=1)

    seg_tet = np.repeat(np.arange(nt), 4)
    seg_face = topo.tet_faces.ravel()
    segments = np.stack([bary[seg_tet], face_c[seg_face]], axis=1)

    # the two faces of a tet containing local edge (a, b) are opposite the other two vertices
    quad_tet = np.repeat(np.arange(nt), 6)
    quad_edge = topo.tet_edges.ravel()
    others = np.array([[l for l in range(4) if l not in e] for e in LOCAL_EDGES])
    f1 = topo.tet_faces[:, others[:, 0]].ravel()
    f2 = topo.tet_faces[:, others[:, 1]].ravel()
    quads = np.stack([edge_c[quad_edge], face_c[f1], bary[quad_tet], face_c[f2]], axis=1)

    sub_vertex = tets.ravel()
    order = np.argsort(sub_vertex, kind="stable")
    counts = np.bincount(sub_vertex, minlength=mesh.n_vertices)
    cell_ptr = np.concatenate(([0], np.cumsum(counts)))
    return DualComplex(
        vertices=bary,
        segment_tet=seg_tet,
        segment_face=seg_face,
        segments=segments,
        quad_tet=quad_tet,
        quad_edge=quad_edge,
        quads=quads,
        cell_ptr=cell_ptr,
        cell_subcells=order,
        face_centers=face_c,
        edge_centers=edge_c,
    )


def _shape(xhat: np.ndarray) -> np.ndarray:
    """Trilinear corner weights; shape ``(nq, 8)``."""
    xhat = np.atleast_2d(xhat)
    f = 0.5 * (1.0 + xhat[:, None, :] * CORNER_SIGNS[None, :, :])
    return np.prod(f, axis=2)


def _shape_grad(xhat: np.ndarray) -> np.ndarray:
    """Derivatives of the corner weights; shape ``(nq, 8, 3)``."""
    xhat = np.atleast_2d(xhat)
    f = 0.5 * (1.0 + xhat[:, None, :] * CORNER_SIGNS[None, :, :])
    out = np.empty(f.shape)
    for m in range(3):
        rest = [n for n in range(3) if n != m]
        out[:, :, m] = 0.5 * CORNER_SIGNS[None, :, m] * f[:, :, rest[0]] * f[:, :, rest[1]]
    return out


@dataclass(frozen=True)
class Subcell:
    """One hexahedral subcell with its eight corners in canonical order."""

    index: int
    tet: int
    local_vertex: int
    vertex: int
    axis_vertices: tuple
    corners: np.ndarray

    @property
    def entity_map(self) -> dict:
        """Corner index -> the primal vertices whose barycentre it is."""
        out = {}
        for c in range(8):
            verts = [self.vertex] + [self.axis_vertices[m] for m in range(3) if CORNER_BITS[c, m]]
            out[c] = tuple(verts)
        return out


class SubcellSet:
    """All subcells of a mesh in vectorised form.

    Subcell ``4 t + l`` belongs to tet ``t`` and its local vertex ``l``.
    """

    def __init__(self, corners: np.ndarray, tet=None, local_vertex=None, vertex=None, axis_vertices=None):
        self.corners = np.ascontiguousarray(corners, dtype=float)
        n = len(self.corners)
        self.tet = np.arange(n) if tet is None else np.asarray(tet)
        self.local_vertex = np.zeros(n, dtype=np.int64) if local_vertex is None else np.asarray(local_vertex)
        self.vertex = np.arange(n) if vertex is None else np.asarray(vertex)
        self.axis_vertices = (
            -np.ones((n, 3), dtype=np.int64) if axis_vertices is None else np.asarray(axis_vertices)
        )

    def __len__(self) -> int:
        return len(self.corners)

    def __getitem__(self, k: int) -> Subcell:
        return Subcell(
            index=int(k),
            tet=int(self.tet[k]),
            local_vertex=int(self.local_vertex[k]),
            vertex=int(self.vertex[k]),
            axis_vertices=tuple(int(v) for v in self.axis_vertices[k]),
            corners=self.corners[k],
        )

    def map_points(self, xhat: np.ndarray) -> np.ndarray:
        """Physical images of reference points in every subcell; ``(ns, nq, 3)``."""
        return np.einsum("qc,scd->sqd", _shape(xhat), self.corners)

    def jacobians(self, xhat: np.ndarray) -> np.ndarray:
        """``J[s, q, d, m] = dx_d / dxhat_m``; shape ``(ns, nq, 3, 3)``."""
        return np.einsum("qcm,scd->sqdm", _shape_grad(xhat), self.corners)

    def volumes(self, npts: int = 3) -> np.ndarray:
        from .polybasis import tensor_gauss

        pts, w = tensor_gauss(npts)
        return np.linalg.det(self.jacobians(pts)) @ w

    def quality(self) -> np.ndarray:
        """Minimum of ``det J`` on a 3x3x3 grid divided by the corner-box volume / 8."""
        g = np.linspace(-1, 1, 3)
        pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        detj = np.linalg.det(self.jacobians(pts)).min(axis=1)
        box = np.prod(np.ptp(self.corners, axis=1), axis=1)
        return 8.0 * detj / box


def subcell_axes(mesh: PrimalMesh) -> np.ndarray:
    """Axis vertices of every subcell, shape ``(4 nt, 3)``.

    The three other tet vertices in ascending global index, with the last two
    swapped when the resulting frame is left-handed.  Handedness is decided
    combinatorially from the (positively oriented) tet vertex order, so it
    is unaffected by vertex perturbations that keep tets valid.
    """
    tets = mesh.tets
    nt = len(tets)
    axes = np.empty((nt, 4, 3), dtype=np.int64)
    for l in range(4):
        rest_local = np.array([m for m in range(4) if m != l])
        rest = tets[:, rest_local]
        order = np.argsort(rest, axis=1, kind="stable")
        sorted_local = rest_local[order]
        # parity of the permutation (l, sorted_local...) of (0, 1, 2, 3)
        perm = np.concatenate([np.full((nt, 1), l), sorted_local], axis=1)
        inv = (perm[:, :, None] > perm[:, None, :]) & np.triu(np.ones((4, 4), dtype=bool), 1)[None]
        odd = inv.sum(axis=(1, 2)) % 2 == 1
        s = np.take_along_axis(rest, order, axis=1)
        s[odd, 1], s[odd, 2] = s[odd, 2].copy(), s[odd, 1].copy()
        axes[:, l, :] = s
    return axes.reshape(-1, 3)


def build_subcells(mesh: PrimalMesh, dual: DualComplex | None = None) -> SubcellSet:
    """Four subcells per tet with the canonical corner assignment.

    Raises:
        MeshError: a subcell with non-positive Jacobian determinant at a
            sample point (names the tet).
    """
    V = mesh.vertices
    nt = mesh.n_tets
    vertex = mesh.tets.ravel()
    axes = subcell_axes(mesh)
    pts = np.concatenate([V[vertex][:, None, :], V[axes]], axis=1)  # (ns, 4, 3)
    sel = np.concatenate([np.ones((8, 1)), CORNER_BITS], axis=1)
    corners = np.einsum("cp,spd->scd", sel, pts) / sel.sum(axis=1)[None, :, None]
    subs = SubcellSet(
        corners,
        tet=np.repeat(np.arange(nt), 4),
        local_vertex=np.tile(np.arange(4), nt),
        vertex=vertex,
        axis_vertices=axes,
    )
    g = np.linspace(-1, 1, 3)
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    detj = np.linalg.det(subs.jacobians(grid))
    bad = (detj <= 0).any(axis=1)
    if bad.any():
        t = int(subs.tet[np.nonzero(bad)[0][0]])
        raise MeshError(f"inverted subcell in tet {t}")
    return subs


def map_point(subcell: Subcell, xhat) -> np.ndarray:
    """Trilinear image of one reference point."""
    return _shape(np.asarray(xhat, dtype=float))[0] @ subcell.corners


def jacobian(subcell: Subcell, xhat) -> tuple[np.ndarray, float]:
    """``(J, det J)`` at one reference point."""
    J = np.einsum("cm,cd->dm", _shape_grad(np.asarray(xhat, dtype=float))[0], subcell.corners)
    return J, float(np.linalg.det(J))


def piola(subcell: Subcell, xhat, vhat) -> np.ndarray:
    """Covariant transform ``J^{-T} vhat``."""
    J, _ = jacobian(subcell, xhat)
    return np.linalg.solve(J.T, np.asarray(vhat, dtype=float))


def inverse_map(subcell: Subcell, x, tol: float = 1e-14, maxiter: int = 50) -> np.ndarray:
    """Reference coordinates of a physical point (Newton iteration)."""
    x = np.asarray(x, dtype=float)
    xh = np.zeros(3)
    for _ in range(maxiter):
        J, _ = jacobian(subcell, xh)
        step = np.linalg.solve(J, x - map_point(subcell, xh))
        xh = xh + step
        if np.abs(step).max() < tol:
            break
    return xh


def export_subcells_vtk(path, subs: SubcellSet, cell_data: dict | None = None) -> None:
    pts = subs.corners.reshape(-1, 3)
    cells = (np.arange(len(subs))[:, None] * 8 + np.array(HEX_CORNER_ORDER)[None, :])
    data = {"tet": subs.tet, "vertex": subs.vertex, "quality": subs.quality()}
    data.update(cell_data or {})
    write_unstructured_grid(path, pts, cells, VTK_HEXAHEDRON, cell_data=data, title="subcells")


def export_dual_vtk(path, dual: DualComplex, what: str = "quads") -> None:
    """Dual-face quads (``what='quads'``) or dual-edge segments (``'segments'``)."""
    if what == "quads":
        pts = dual.quads.reshape(-1, 3)
        cells = np.arange(len(pts)).reshape(-1, 4)
        write_unstructured_grid(path, pts, cells, VTK_QUAD, cell_data={"edge": dual.quad_edge}, title="dual faces")
    elif what == "segments":
        pts = dual.segments.reshape(-1, 3)
        cells = np.arange(len(pts)).reshape(-1, 2)
        write_unstructured_grid(
            path, pts, cells, VTK_LINE, cell_data={"face": dual.segment_face}, title="dual edges"
        )
    else:
        raise ValueError(f"unknown dual entity family {what!r}")


__all__ = [
    "DualComplex",
    "Subcell",
    "SubcellSet",
    "build_dual",
    "build_subcells",
    "map_point",
    "jacobian",
    "piola",
    "inverse_map",
    "subcell_axes",
    "export_subcells_vtk",
    "export_dual_vtk",
    "LOCAL_FACES",
]
