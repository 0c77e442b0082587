import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from memdarcy.cell import assemble, solve_w1, solve_w2
from memdarcy.geometry import HoleSpec, build_cell_mesh
from memdarcy.kernels import compute_kernels

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def coarse_mesh():
    return build_cell_mesh(HoleSpec(), 0.1)


@pytest.fixture(scope="session")
def coarse_cell(coarse_mesh):
    return assemble(coarse_mesh)


@pytest.fixture(scope="session")
def open_cell():
    return assemble(build_cell_mesh(HoleSpec.none(), 0.25))


@pytest.fixture(scope="session")
def coarse_trajs(coarse_cell):
    space, op = coarse_cell
    w1 = [solve_w1(space, op, i, 1.0, 1e-2) for i in (1, 2)]
    w2 = [solve_w2(space, op, i, 1.0, 1e-2) for i in (1, 2)]
    return w1, w2


@pytest.fixture(scope="session")
def coarse_table(coarse_cell, coarse_trajs):
    _, op = coarse_cell
    return compute_kernels(*coarse_trajs, op)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
