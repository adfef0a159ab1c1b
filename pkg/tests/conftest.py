import numpy as np
import pytest

from vumopt.model import build_model
from vumopt.scenarios import CASE1, two_bus


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def case1():
    return two_bus(CASE1, "case1")


@pytest.fixture
def case1_model(case1):
    return build_model(case1)
