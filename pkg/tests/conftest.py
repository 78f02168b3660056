import numpy as np
import pytest

from greencross import assembly
from greencross.geometry import build_sphere_mesh


@pytest.fixture(scope="session")
def sphere2():
    return build_sphere_mesh(2)


@pytest.fixture(scope="session")
def sphere3():
    return build_sphere_mesh(3)


@pytest.fixture(scope="session")
def dense_slp3(sphere3):
    """Level-3 constant Galerkin single-layer matrix, default orders."""
    dofs = np.arange(sphere3.nt)
    return assembly.assemble_galerkin_block(
        "slp", sphere3, "constant", dofs, dofs, (3, 5)).values
