import numpy as np
import pytest

from sacfem import fem, mesh


@pytest.fixture(scope="session")
def mesh2():
    return mesh.build_box_mesh(2)


@pytest.fixture(scope="session")
def mesh4():
    return mesh.build_box_mesh(4)


@pytest.fixture(scope="session")
def space4(mesh4):
    return fem.assemble(mesh4)


@pytest.fixture(scope="session")
def space8():
    return fem.assemble(mesh.build_box_mesh(8))


@pytest.fixture(scope="session")
def space16():
    return fem.assemble(mesh.build_box_mesh(16))


@pytest.fixture(scope="session")
def sine_product():
    def f(p):
        return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) * np.sin(np.pi * p[:, 2])
    return f
