"""Mesh -> dual grid -> spaces -> matrices in one call."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import (
    BlockDiagMatrix,
    CurlOperator,
    MaterialSpec,
    assemble_curl,
    assemble_mass,
)
from .dualgrid import DualComplex, SubcellSet, build_dual, build_subcells
from .fespace import BoundaryConstraint, DofSpace, apply_electric_wall, build_electric_space, build_magnetic_space
from .mesh import PrimalMesh, TopologyTables, build_topology


@dataclass
class Discretisation:
    mesh: PrimalMesh
    topo: TopologyTables
    dual: DualComplex
    subcells: SubcellSet
    e_space: DofSpace
    h_space: DofSpace
    wall: BoundaryConstraint
    Me: BlockDiagMatrix
    Mh: BlockDiagMatrix
    C: object

    @property
    def order(self) -> int:
        return self.e_space.order

    def h_size(self) -> float:
        """Longest primal edge."""
        V = self.mesh.vertices[self.topo.edges]
        return float(np.linalg.norm(V[:, 1] - V[:, 0], axis=1).max())


def discretise(
    mesh: PrimalMesh,
    P: int,
    materials: MaterialSpec | None = None,
    mass: str = "lumped",
    curl: str = "auto",
    keep_faces=None,
) -> Discretisation:
    """Build every object needed by the solvers.

    ``curl='matrix'`` assembles ``C`` as CSR, ``'operator'`` uses the
    matrix-free form; ``'auto'`` picks the matrix below 20k magnetic DOFs.
    """
    topo = build_topology(mesh)
    dual = build_dual(mesh, topo)
    subs = build_subcells(mesh, dual)
    E = build_electric_space(mesh, topo, subs, P)
    H = build_magnetic_space(mesh, topo, subs, P)
    wall = apply_electric_wall(E, topo, keep_faces=keep_faces)
    Me = assemble_mass(E, subs, materials, mass, regions=mesh.regions, constraint=wall)
    Mh = assemble_mass(H, subs, materials, mass, regions=mesh.regions)
    if curl == "auto":
        curl = "matrix" if H.n_dofs < 20000 else "operator"
    C = assemble_curl(E, H, wall) if curl == "matrix" else CurlOperator(E, H, wall)
    return Discretisation(mesh, topo, dual, subs, E, H, wall, Me, Mh, C)
