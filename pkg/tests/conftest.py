import numpy as np
import pytest

from flowshape.meshgen import tunnel_mesh, unit_square_mesh


@pytest.fixture(scope="session")
def circle_mesh():
    return tunnel_mesh(h=0.5, n_obstacle=64)


@pytest.fixture(scope="session")
def circle_mesh_fine():
    return tunnel_mesh(h=0.35, n_obstacle=96)


@pytest.fixture(scope="session")
def holdall_mesh():
    return tunnel_mesh(h=0.5, n_obstacle=64, holdall=True)


@pytest.fixture(scope="session")
def square_mesh():
    return unit_square_mesh(8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
