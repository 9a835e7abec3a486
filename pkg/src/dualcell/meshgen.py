"""Structured tetrahedral meshes for the cavity and waveguide experiments.

Every hexahedral grid cell is split into six tets sharing its main diagonal
(Kuhn/Freudenthal split), which is conforming across cells and nested
under uniform refinement of the grid.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .mesh import MeshError, PrimalMesh

REGION_INTERIOR = 0
REGION_PML = 1
REGION_SCATTERER = 2

_KUHN = []
for perm in permutations(range(3)):
    path = [np.zeros(3, dtype=int)]
    for ax in perm:
        nxt = path[-1].copy()
        nxt[ax] = 1
        path.append(nxt)
    _KUHN.append([int(p[0] + 2 * p[1] + 4 * p[2]) for p in path])
_KUHN = np.array(_KUHN)


def box_mesh(lower, upper, cells) -> PrimalMesh:
    """Kuhn triangulation of an axis-aligned box with ``cells = (nx, ny, nz)`` grid cells."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    nx, ny, nz = (int(c) for c in cells)
    xs = [np.linspace(lower[d], upper[d], n + 1) for d, n in enumerate((nx, ny, nz))]
    X, Y, Z = np.meshgrid(*xs, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    corners = np.stack(
        [vid(I + (c & 1), J + ((c >> 1) & 1), K + ((c >> 2) & 1)) for c in range(8)], axis=1
    )
    tets = corners[:, _KUHN].reshape(-1, 4)
    return PrimalMesh.from_arrays(verts, tets)


def cube_mesh(n: int = 1) -> PrimalMesh:
    """Unit cube with ``n`` grid cells per side (``6 n^3`` tets)."""
    return box_mesh((0, 0, 0), (1, 1, 1), (n, n, n))


def cavity_mesh(level: int, dims=(np.pi, np.pi / 2, np.pi / 4), base=None) -> PrimalMesh:
    """Box ``(0,a)x(0,b)x(0,c)`` with ``level * base`` cells per direction.

    Without ``base`` the cells are cubes of side ``c / level``; for the
    default 4:2:1 box that is ``(4L, 2L, L)`` cells.  Levels ``1, 2, 4``
    of the same base are nested.
    """
    a, b, c = dims
    if base is None:
        h = c / level
        cells = [max(1, int(round(s / h))) for s in (a, b, c)]
    else:
        cells = [int(level) * int(n) for n in base]
    return box_mesh((0, 0, 0), (a, b, c), cells)


def waveguide_mesh(
    level: int,
    length: float = 2.0,
    width: float = 0.5,
    pml_right: float = 0.5,
    pml_left: float = 0.0,
) -> PrimalMesh:
    """Waveguide ``(-pml_left, length + pml_right) x (0, width)^2``.

    Grid cells have side ``width / level``; tets with centroid in a PML slab
    get region :data:`REGION_PML`.
    """
    h = width / level
    nx = int(round((length + pml_left + pml_right) / h))
    mesh = box_mesh((-pml_left, 0, 0), (length + pml_right, width, width), (nx, level, level))
    cx = mesh.vertices[mesh.tets].mean(axis=1)[:, 0]
    regions = np.where((cx < 0) | (cx > length), REGION_PML, REGION_INTERIOR)
    return PrimalMesh(vertices=mesh.vertices, tets=mesh.tets, regions=regions)


def sphere_waveguide_mesh(
    level: int,
    radius: float = 0.15,
    center=(1.0, 0.25, 0.25),
    length: float = 2.0,
    width: float = 0.5,
    pml_right: float = 0.5,
    pml_left: float = 0.0,
) -> PrimalMesh:
    """Waveguide mesh with a faceted sphere tagged :data:`REGION_SCATTERER`.

    The sphere is the union of tets whose centroid lies inside it (no curved
    elements).
    """
    mesh = waveguide_mesh(level, length, width, pml_right, pml_left)
    cen = mesh.vertices[mesh.tets].mean(axis=1)
    inside = np.linalg.norm(cen - np.asarray(center), axis=1) < radius
    if not inside.any():
        raise MeshError(f"level {level} is too coarse to resolve a sphere of radius {radius}")
    regions = mesh.regions.copy()
    regions[inside] = REGION_SCATTERER
    return PrimalMesh(vertices=mesh.vertices, tets=mesh.tets, regions=regions)


def perturb(mesh: PrimalMesh, amplitude: float, seed: int = 0, interior_only: bool = True) -> PrimalMesh:
    """Randomly displace vertices by up to ``amplitude`` in each coordinate."""
    rng = np.random.default_rng(seed)
    disp = rng.uniform(-amplitude, amplitude, size=mesh.vertices.shape)
    if interior_only:
        from .mesh import build_topology

        disp[build_topology(mesh).boundary_vertex] = 0.0
    return mesh.with_vertices(mesh.vertices + disp)
