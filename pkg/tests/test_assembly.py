import numpy as np
import pytest
import scipy.sparse as sp

from dualcell.assembly import (
    AssemblyError,
    BlockDiagMatrix,
    CurlOperator,
    MaterialSpec,
    PmlSpec,
    assemble_curl,
    assemble_curl_dual,
    assemble_mass,
    assemble_pml,
    nnz_per_row,
    pml_tets,
)
from dualcell.fespace import apply_electric_wall, build_electric_space, build_magnetic_space
from dualcell.meshgen import box_mesh, cube_mesh, perturb
from dualcell.pipeline import discretise

from conftest import setup_mesh


def spaces(mesh, P):
    topo, dual, subs = setup_mesh(mesh)
    return topo, subs, build_electric_space(mesh, topo, subs, P), build_magnetic_space(mesh, topo, subs, P)


@pytest.mark.parametrize("P", [1, 2, 3])
def test_dual_curl_is_transpose(cube2p, P):
    topo, subs, E, H = spaces(cube2p, P)
    C = assemble_curl(E, H)
    Ct = assemble_curl_dual(E, H)
    A, B = sp.csr_matrix(Ct), sp.csr_matrix(C.T)
    A.sort_indices()
    B.sort_indices()
    assert np.array_equal(A.indptr, B.indptr) and np.array_equal(A.indices, B.indices)
    assert np.abs(A.data - B.data).max() <= 1e-14


def test_curl_is_topological(cube1):
    P = 2
    C0 = assemble_curl(*spaces(cube1, P)[2:])
    C1 = assemble_curl(*spaces(perturb(cube1, 0.1, seed=4, interior_only=False), P)[2:])
    assert (C0 != C1).nnz == 0
    assert np.array_equal(C0.data, C1.data)


@pytest.mark.parametrize("P", [1, 3])
def test_operator_matches_matrix(cube2p, P):
    topo, subs, E, H = spaces(cube2p, P)
    wall = apply_electric_wall(E, topo)
    C = assemble_curl(E, H, wall)
    op = CurlOperator(E, H, wall)
    rng = np.random.default_rng(0)
    e = rng.standard_normal(C.shape[1])
    h = rng.standard_normal(C.shape[0])
    np.testing.assert_allclose(op @ e, C @ e, atol=1e-12)
    np.testing.assert_allclose(op.T @ h, C.T @ h, atol=1e-12)
    H2 = rng.standard_normal((C.shape[0], 3))
    np.testing.assert_allclose(op.T @ H2, C.T @ H2, atol=1e-12)


def test_curl_of_gradient_vanishes(cube2p):
    # discrete gradients of nodal potentials: interpolate grad(x.y.z) and check C e ~ 0 on an affine field
    topo, subs, E, H = spaces(cube2p, 2)
    from dualcell.fespace import interpolate

    g = lambda x: np.stack([np.ones(len(x)), 2 * np.ones(len(x)), -np.ones(len(x))], axis=1)  # noqa: E731
    e = interpolate(E, subs, g)
    assert np.abs(assemble_curl(E, H) @ e).max() < 1e-12


@pytest.mark.parametrize("mode", ["lumped", "consistent"])
def test_mass_spd_and_volume(cube2p, mode):
    topo, subs, E, H = spaces(cube2p, 2)
    from dualcell.fespace import interpolate

    for S in (E, H):
        M = assemble_mass(S, subs, mode=mode)
        A = M.to_sparse()
        assert abs(A - A.T).max() < 1e-14
        x = interpolate(S, subs, lambda p: np.broadcast_to([1.0, 0, 0], p.shape))
        # |e_x|^2 integrated over the unit cube
        assert abs(x @ (A @ x) - 1.0) < 1e-12
        assert np.linalg.eigvalsh(A.toarray()).min() > 0 if A.shape[0] < 3000 else True


def test_lumped_is_sparser(cube1):
    topo, subs, E, H = spaces(cube1, 2)
    for S in (E, H):
        lump = nnz_per_row(assemble_mass(S, subs, mode="lumped"))
        cons = nnz_per_row(assemble_mass(S, subs, mode="consistent"))
        assert lump < cons


def test_block_diag_solve(cube2p):
    topo, subs, E, H = spaces(cube2p, 3)
    M = assemble_mass(E, subs)
    assert M.block_sizes().sum() == M.n
    x = np.random.default_rng(1).standard_normal(M.n)
    np.testing.assert_allclose(M.solve(M.matvec(x)), x, rtol=1e-10, atol=1e-10)
    A = M.to_sparse()
    B = BlockDiagMatrix.from_sparse(A)
    np.testing.assert_allclose(B.matvec(x), A @ x, atol=1e-13)


def test_material_scaling(cube1):
    topo, subs, E, H = spaces(cube1, 1)
    reg = np.zeros(cube1.n_tets, dtype=int)
    M1 = assemble_mass(E, subs, regions=reg).to_sparse()
    M4 = assemble_mass(E, subs, MaterialSpec(eps={0: 4.0}), regions=reg).to_sparse()
    assert abs(M4 - 4 * M1).max() < 1e-13
    Md = assemble_mass(E, subs, MaterialSpec(eps={0: [1.0, 2.0, 3.0]}), regions=reg)
    assert Md.n == E.n_dofs


def test_material_errors(cube1):
    topo, subs, E, H = spaces(cube1, 1)
    reg = np.zeros(cube1.n_tets, dtype=int)
    with pytest.raises(AssemblyError):
        assemble_mass(E, subs, MaterialSpec(eps={0: -1.0}), regions=reg)
    with pytest.raises(AssemblyError):
        assemble_mass(E, subs, MaterialSpec(eps={0: [[1, 1, 0], [0, 1, 0], [0, 0, 1]]}), regions=reg)
    with pytest.raises(ValueError):
        assemble_mass(E, subs, mode="bogus")


def test_pml_zero_off_region():
    mesh = box_mesh((0, 0, 0), (2, 1, 1), (4, 2, 2))
    topo, subs, E, H = spaces(mesh, 2)
    spec = PmlSpec(axis=0, intervals=((1.5, 2.0),), sigma=3.0)
    mats = assemble_pml(mesh, E, H, subs, spec)
    tets = pml_tets(mesh, spec)
    assert tets.sum() == mesh.n_tets // 4
    touched = np.zeros(E.n_dofs, dtype=bool)
    touched[E.slot_dof[tets[subs.tet]].ravel()] = True
    D = mats.De_tilde
    assert abs(D[~touched]).max() == 0 if D[~touched].nnz else True
    assert mats.Re.shape == (touched.sum(), E.n_dofs)
    with pytest.raises(AssemblyError):
        pml_tets(mesh, PmlSpec(axis=0, intervals=((1.2, 2.0),)))
    with pytest.raises(ValueError):
        PmlSpec(sigma=-1.0)


def test_discretise_modes(cube1):
    a = discretise(cube1, 2, curl="matrix")
    b = discretise(cube1, 2, curl="operator")
    x = np.random.default_rng(0).standard_normal(a.Me.n)
    np.testing.assert_allclose(a.C @ x, b.C @ x, atol=1e-12)
    assert a.h_size() == pytest.approx(np.sqrt(3))
