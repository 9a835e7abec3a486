import numpy as np
import pytest
import scipy.linalg as sla

from dualcell.meshgen import cavity_mesh
from dualcell.pipeline import discretise
from dualcell.refsol import CavitySpec, cavity_eigenvalues
from dualcell.spectral import (
    EigenSolverError,
    lumped_relative_error,
    solve_eigenpairs,
    spurious_scan,
)


def test_spurious_injected_value_flagged():
    ana = cavity_eigenvalues(CavitySpec(), 20)
    comp = np.concatenate([ana[ana < 15] * (1 + 1e-3), [6.5]])
    rep = spurious_scan(comp, ana)
    assert rep.n_flags == 1 and rep.flagged[0] == 6.5
    assert len(rep.missing) == 0


def test_spurious_multiplicity():
    rep = spurious_scan([17.0, 17.0], [17.0, 17.0], window=(1, 20))
    assert rep.n_flags == 0
    rep = spurious_scan([17.0, 17.0], [17.0], window=(1, 20))
    assert rep.n_flags == 1
    rep = spurious_scan([5.0], [5.0, 8.0], window=(1, 20))
    assert rep.missing.tolist() == [8.0]


@pytest.fixture(scope="module")
def small():
    d = discretise(cavity_mesh(1, base=(2, 1, 1)), 2, curl="matrix")
    C = d.C.toarray()
    K = C @ np.linalg.solve(d.Me.to_sparse().toarray(), C.T)
    dense = sla.eigh(K, d.Mh.to_sparse().toarray(), eigvals_only=True)
    return d, dense


def test_matches_dense(small):
    d, dense = small
    r = solve_eigenpairs(d.Me, d.Mh, d.C, 6, tol=1e-10)
    phys = dense[dense > 1e-8 * dense.max()][:6]
    np.testing.assert_allclose(r.eigenvalues, phys, rtol=1e-8)
    assert (r.eigenvalues > 0).all()
    assert r.kernel_count >= 0
    U = r.eigenvectors
    G = U.T @ d.Mh.to_sparse() @ U
    np.testing.assert_allclose(G, np.eye(6), atol=1e-8)
    R = d.C @ d.Me.solve(d.C.T @ U) - d.Mh.to_sparse() @ U * r.eigenvalues
    assert np.abs(R).max() < 1e-6 * r.lambda_max


def test_kernel_is_large(small):
    d, dense = small
    assert (dense < 1e-8 * dense.max()).sum() > d.Mh.n // 4
    assert dense.min() > -1e-8 * dense.max()


def test_scaling(small):
    d, _ = small
    m = cavity_mesh(1, base=(2, 1, 1))
    m2 = type(m)(2 * m.vertices, m.tets, m.regions)
    d2 = discretise(m2, 2, curl="matrix")
    a = solve_eigenpairs(d.Me, d.Mh, d.C, 4, tol=1e-10).eigenvalues
    b = solve_eigenpairs(d2.Me, d2.Mh, d2.C, 4, tol=1e-10).eigenvalues
    np.testing.assert_allclose(b, a / 4, rtol=1e-8)


def test_solver_gives_up(small):
    d, _ = small
    with pytest.raises(EigenSolverError):
        solve_eigenpairs(d.Me, d.Mh, d.C, 6, tol=1e-14, basis=20, max_restarts=2)


def test_csv(tmp_path, small):
    d, _ = small
    r = solve_eigenpairs(d.Me, d.Mh, d.C, 3)
    r.write_csv(tmp_path / "ev.csv", analytic=[5, 8, 13])
    assert len((tmp_path / "ev.csv").read_text().splitlines()) == 4


def test_lumped_error_scale_invariant(small):
    d, _ = small
    x = np.random.default_rng(0).standard_normal(d.Mh.n)
    assert lumped_relative_error(d.Mh, -3 * x, x) < 1e-14
