import numpy as np
import pytest

from dualcell.dualgrid import (
    build_dual,
    build_subcells,
    export_dual_vtk,
    export_subcells_vtk,
    inverse_map,
    jacobian,
    map_point,
    piola,
)
from dualcell.mesh import MeshError, PrimalMesh, build_topology
from dualcell.meshgen import cube_mesh, perturb

from conftest import setup_mesh


def test_single_tet_corners(tet):
    topo, dual, subs = setup_mesh(tet)
    assert len(subs) == 4
    s = subs[0]
    V = tet.vertices
    np.testing.assert_allclose(map_point(s, [-1, -1, -1]), V[s.vertex])
    np.testing.assert_allclose(map_point(s, [1, 1, 1]), V.mean(axis=0))
    for c, verts in s.entity_map.items():
        bits = [(c >> m) & 1 for m in range(3)]
        np.testing.assert_allclose(map_point(s, 2 * np.array(bits) - 1), V[list(verts)].mean(axis=0), atol=1e-15)


@pytest.mark.parametrize("mesh", [cube_mesh(2), perturb(cube_mesh(3), 0.06, seed=2)])
def test_subcells_partition_tets(mesh):
    _, dual, subs = setup_mesh(mesh)
    vol = subs.volumes().reshape(-1, 4).sum(axis=1)
    np.testing.assert_allclose(vol, mesh.volumes(), rtol=1e-13)
    assert (subs.quality() > 0).all()
    # dual cells partition the domain too
    cell_vol = np.array([subs.volumes()[dual.cell(v)].sum() for v in range(mesh.n_vertices)])
    assert abs(cell_vol.sum() - mesh.volumes().sum()) < 1e-12


def test_right_handed_frames(cube2p):
    _, _, subs = setup_mesh(cube2p)
    J = subs.jacobians(np.zeros((1, 3)))[:, 0]
    assert (np.linalg.det(J) > 0).all()


def test_axes_are_combinatorial(cube2p):
    a = build_subcells(cube2p).axis_vertices
    b = build_subcells(perturb(cube2p, 0.03, seed=9)).axis_vertices
    assert np.array_equal(a, b)


def test_dual_complex_counts(cube1):
    topo = build_topology(cube1)
    dual = build_dual(cube1, topo)
    nt = cube1.n_tets
    assert dual.segments.shape == (4 * nt, 2, 3) and dual.quads.shape == (6 * nt, 4, 3)
    assert dual.n_cells == cube1.n_vertices
    assert sorted(np.concatenate([dual.cell(v) for v in range(dual.n_cells)]).tolist()) == list(range(4 * nt))


def test_inverse_map_and_piola(cube2p):
    subs = build_subcells(cube2p)
    s = subs[7]
    xh = np.array([0.3, -0.6, 0.9])
    np.testing.assert_allclose(inverse_map(s, map_point(s, xh)), xh, atol=1e-12)
    J, det = jacobian(s, xh)
    assert det > 0
    v = piola(s, xh, [1.0, 0, 0])
    # covariant: v . dx/dxhat_m = delta_{0m}
    np.testing.assert_allclose(J.T @ v, [1, 0, 0], atol=1e-13)


def test_inverted_subcell_detected():
    # a nearly flat sliver tet gives valid tets but checks run on subcells of a valid mesh;
    # corrupt the geometry after validation to trigger the subcell check
    m = cube_mesh(1)
    bad = PrimalMesh(m.vertices.copy(), m.tets[:, [0, 1, 3, 2]], m.regions)
    with pytest.raises(MeshError):
        build_subcells(bad)


def test_vtk_export(tmp_path, tet):
    topo, dual, subs = setup_mesh(tet)
    export_subcells_vtk(tmp_path / "s.vtk", subs, {"val": np.arange(4.0)})
    export_dual_vtk(tmp_path / "q.vtk", dual)
    export_dual_vtk(tmp_path / "e.vtk", dual, "segments")
    txt = (tmp_path / "s.vtk").read_text()
    assert "CELLS 4 36" in txt and "SCALARS val" in txt
    with pytest.raises(ValueError):
        export_dual_vtk(tmp_path / "x.vtk", dual, "bogus")
