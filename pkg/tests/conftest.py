import numpy as np
import pytest

from regime_iter import _accel
from regime_iter.model import CallPayoff, GbmRegimeModel, GeneratorMatrix, ProblemSpec


@pytest.fixture
def two_regime():
    Q = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    return GbmRegimeModel(Q, 0.05, [0.15, 0.25], 0.0)


@pytest.fixture
def three_regime():
    Q = GeneratorMatrix(np.array([[-1.0, 0.5, 0.5], [0.5, -1.0, 0.5], [0.5, 0.5, -1.0]]))
    return GbmRegimeModel(Q, 0.05, [0.15, 0.2, 0.25], 0.0)


@pytest.fixture
def single_regime():
    return GbmRegimeModel(GeneratorMatrix(np.zeros((1, 1))), 0.05, 0.15, 0.0)


@pytest.fixture
def call_problem():
    return ProblemSpec(1.0, CallPayoff(1.0))


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    with _accel.backend_as(request.param):
        yield request.param
