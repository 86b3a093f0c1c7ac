import numpy as np
import pytest

from cornerheat import (build_l_shape, build_notched_rectangle, build_square,
                        find_gamma, uniform_refine)


def _hierarchy(base, levels):
    meshes = [base]
    while len(meshes) < levels:
        meshes.append(uniform_refine(meshes[-1]))
    return meshes


@pytest.fixture(scope="session")
def lshape():
    return build_l_shape()


@pytest.fixture(scope="session")
def lshape_hier(lshape):
    return _hierarchy(lshape, 5)


@pytest.fixture(scope="session")
def lshape2(lshape_hier):
    return lshape_hier[1]


@pytest.fixture(scope="session")
def lshape3(lshape_hier):
    return lshape_hier[2]


@pytest.fixture(scope="session")
def notched():
    return build_notched_rectangle()


@pytest.fixture(scope="session")
def square2():
    return uniform_refine(uniform_refine(build_square()))


@pytest.fixture(scope="session")
def gamma_report(lshape_hier):
    # shared by correction and harness tests; the search is deterministic
    return find_gamma(lshape_hier)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260814)
