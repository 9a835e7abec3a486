import numpy as np
import pytest

from dualcell.mesh import (
    MeshError,
    PrimalMesh,
    build_topology,
    euler_characteristic,
    format_gmsh,
    format_simple,
    load_mesh,
    parse_mesh,
)
from dualcell.meshgen import (
    REGION_PML,
    REGION_SCATTERER,
    box_mesh,
    cavity_mesh,
    cube_mesh,
    perturb,
    sphere_waveguide_mesh,
    waveguide_mesh,
)


def test_single_tet_topology(tet):
    topo = build_topology(tet)
    assert (topo.n_edges, topo.n_faces) == (6, 4)
    assert topo.boundary_face.all() and topo.boundary_edge.all() and topo.boundary_vertex.all()
    assert euler_characteristic(tet, topo) == 1


def test_orientation_fixed():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    m = PrimalMesh.from_arrays(v, [[0, 1, 3, 2]])
    assert m.volumes()[0] > 0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_cube_counts(n):
    m = cube_mesh(n)
    topo = build_topology(m)
    assert m.n_tets == 6 * n**3
    assert euler_characteristic(m, topo) == 1
    assert abs(m.volumes().sum() - 1.0) < 1e-13
    # every interior face has two tets, boundary faces one
    assert np.all((topo.face_tets[:, 1] >= 0) == ~topo.boundary_face)
    assert topo.boundary_face.sum() == 12 * n**2


def test_topology_independent_of_tet_order(cube1):
    perm = np.random.default_rng(1).permutation(cube1.n_tets)
    m2 = PrimalMesh.from_arrays(cube1.vertices, cube1.tets[perm])
    t1, t2 = build_topology(cube1), build_topology(m2)
    assert np.array_equal(t1.edges, t2.edges) and np.array_equal(t1.faces, t2.faces)


def test_lookup_ids(cube1):
    topo = build_topology(cube1)
    a, b = topo.edges[3]
    assert topo.edge_id(b, a) == 3
    f = topo.faces[5]
    assert topo.face_id(f[2], f[0], f[1]) == 5


@pytest.mark.parametrize(
    "text",
    [
        "vertices 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ntets 1\n0 1 2 9\n",  # dangling
        "vertices 4\n0 0 0\n1 0 0\n2 0 0\n3 0 0\ntets 1\n0 1 2 3\n",  # degenerate
        "vertices 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ntets 2\n0 1 2 3\n3 2 1 0\n",  # duplicate
        "vertices 4\n0 0 0\n1 0 0\n",  # truncated
        "",
    ],
)
def test_invalid_meshes_rejected(text):
    with pytest.raises(MeshError):
        parse_mesh(text)


def test_round_trip_formats(cube2p):
    for fmt in (format_simple, format_gmsh):
        m = load_mesh(fmt(cube2p))
        assert np.array_equal(m.vertices, cube2p.vertices)
        assert np.array_equal(m.tets, cube2p.tets)
        assert np.array_equal(m.regions, cube2p.regions)


def test_gmsh_regions_and_missing_file(tmp_path):
    m = box_mesh((0, 0, 0), (1, 1, 1), (1, 1, 1))
    m = PrimalMesh(m.vertices, m.tets, np.arange(m.n_tets))
    p = tmp_path / "m.msh"
    p.write_text(format_gmsh(m))
    assert np.array_equal(load_mesh(p).regions, np.arange(6))
    with pytest.raises(MeshError):
        load_mesh(tmp_path / "nope.msh")


def test_generators():
    c = cavity_mesh(1)
    assert c.n_tets == 6 * 8
    c2 = cavity_mesh(2, base=(2, 1, 1))
    assert c2.n_tets == 6 * 4 * 2 * 2
    assert abs(c2.volumes().sum() - np.pi**3 / 8) < 1e-12
    w = waveguide_mesh(2)
    assert abs(w.volumes().sum() - 2.5 * 0.25) < 1e-12
    assert abs(w.volumes()[w.regions == REGION_PML].sum() - 0.5 * 0.25) < 1e-12
    s = sphere_waveguide_mesh(4)
    assert (s.regions == REGION_SCATTERER).any()
    vs = s.volumes()[s.regions == REGION_SCATTERER].sum()
    assert 0.3 < vs / (4 / 3 * np.pi * 0.15**3) < 3.0


def test_perturb_keeps_boundary_and_topology(cube1):
    m = cube_mesh(3)
    p = perturb(m, 0.05, seed=0)
    topo = build_topology(m)
    assert np.array_equal(p.vertices[topo.boundary_vertex], m.vertices[topo.boundary_vertex])
    assert not np.array_equal(p.vertices, m.vertices)
    assert np.array_equal(p.tets, m.tets)
    assert p.hash() != m.hash()
