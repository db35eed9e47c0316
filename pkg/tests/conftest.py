import numpy as np
import pytest

from assembly import SolverConfig
from interface_geometry import classify_with_repair
from mesh import Rectangle, build_initial_mesh
from problems import ellipse_problem, line_problem


@pytest.fixture
def unit_square_mesh():
    """Two triangles on [0, 1]^2 sharing the positive-slope diagonal."""
    return build_initial_mesh(1, Rectangle(0.0, 1.0, 0.0, 1.0))


@pytest.fixture
def mesh4():
    return build_initial_mesh(4)


@pytest.fixture
def line():
    return line_problem(c=0.3, rho=10.0)


@pytest.fixture
def ellipse():
    return ellipse_problem(rho=100.0, p=5.0)


@pytest.fixture
def ellipse_level(ellipse):
    """Ellipse classified on the 8x8 mesh."""
    return classify_with_repair(build_initial_mesh(8), ellipse.level_set)


@pytest.fixture
def direct():
    return SolverConfig(epsilon=-1, gamma=10.0, tol=1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
