import numpy as np
import pytest

from dualcell.dualgrid import build_dual, build_subcells
from dualcell.mesh import PrimalMesh, build_topology
from dualcell.meshgen import cube_mesh, perturb


def single_tet():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    return PrimalMesh.from_arrays(v, [[0, 1, 2, 3]])


def setup_mesh(mesh):
    topo = build_topology(mesh)
    dual = build_dual(mesh, topo)
    return topo, dual, build_subcells(mesh, dual)


@pytest.fixture(scope="session")
def tet():
    return single_tet()


@pytest.fixture(scope="session")
def cube1():
    return cube_mesh(1)


@pytest.fixture(scope="session")
def cube2p():
    return perturb(cube_mesh(2), 0.08, seed=3)


ACCEPTANCE_LINES: list = []


@pytest.fixture
def report():
    """``report(tag, ok, detail)`` records one acceptance line (printed at the end of the run)."""

    def _report(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
