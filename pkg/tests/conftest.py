import numpy as np
import pytest

from ddcontrol.datamat import build_matrices
from ddcontrol.dictionary import BoxSet, Dictionary, bound_jacobian
from ddcontrol.pipelines import manipulator_dataset, surge_dataset
from ddcontrol.plants import builtin_plant
from ddcontrol.synthesis import synth_contractive


@pytest.fixture(scope="session")
def manip():
    return builtin_plant("manipulator")


@pytest.fixture(scope="session")
def manip_dict():
    return Dictionary.from_json('{"n":4,"terms":["cos(x1)"]}')


@pytest.fixture(scope="session")
def manip_dm(manip_dict):
    return build_matrices(manipulator_dataset(), manip_dict)


@pytest.fixture(scope="session")
def manip_design(manip_dm, manip_dict):
    res = synth_contractive(manip_dm, bound_jacobian(manip_dict, BoxSet.full(4)))
    assert res.feasible
    return res


@pytest.fixture(scope="session")
def surge():
    return builtin_plant("surge")


@pytest.fixture(scope="session")
def surge_dict():
    return Dictionary.from_json('{"n":2,"terms":["x1^2","x1^3"]}')


@pytest.fixture(scope="session")
def surge_dm(surge_dict):
    return build_matrices(surge_dataset(), surge_dict)


@pytest.fixture(scope="session")
def surge_design(surge_dm, surge_dict):
    res = synth_contractive(surge_dm, bound_jacobian(surge_dict, BoxSet.from_bounds([[-1, 1], None])))
    assert res.feasible
    return res


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
