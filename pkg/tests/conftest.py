import numpy as np
import pytest

from fkldg.dgspace import DgSpace
from fkldg.ldg import CoeffField, assemble
from fkldg.polymesh import PolyMesh, generate_voronoi


def square_mesh(nx=1, ny=1, x0=0.0, y0=0.0, h=1.0):
    xs = x0 + h * np.arange(nx + 1)
    ys = y0 + h * np.arange(ny + 1)
    verts = [(x, y) for y in ys for x in xs]
    vid = lambda i, j: j * (nx + 1) + i
    cells = [[vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)] for j in range(ny) for i in range(nx)]
    return PolyMesh(verts, cells)


@pytest.fixture(scope="session")
def vmesh12():
    return generate_voronoi((0.0, 0.0, 1.0, 1.0), 12, 20, seed=3)


@pytest.fixture(scope="session")
def aniso_system(vmesh12):
    D = np.array([[2.0, 0.3], [0.3, 1.0]])
    cf = CoeffField.constant(vmesh12, 1.3, D)
    space = DgSpace(vmesh12, 2)
    return space, cf, assemble(space, cf, theta=-1.0, eta0=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed after the test summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
