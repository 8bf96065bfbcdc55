import numpy as np
import pytest

from snlsparse.core import ParameterGrid, dictionary_from_matrix
from snlsparse.forward import HeatModelConfig, KernelSpec, gaussian_dictionary, heat_dictionary, ricker_dictionary


@pytest.fixture(scope="session")
def gauss():
    """Width-1 Gaussian on [-10, 10] with 0.1 grid and 0.1 sample spacing."""
    return gaussian_dictionary(KernelSpec("gaussian", 1.0), ParameterGrid.uniform(-10, 10, 201))


@pytest.fixture(scope="session")
def ricker():
    return ricker_dictionary(KernelSpec("ricker", 1.0), ParameterGrid.uniform(-10, 10, 201))


@pytest.fixture(scope="session")
def heat():
    return heat_dictionary(HeatModelConfig())


@pytest.fixture(scope="session")
def small_heat():
    return heat_dictionary(HeatModelConfig(M=400, n_t=50, m=200))


def small_dictionary(seed=0, n=6, m=10):
    """Smooth random-ish small dictionary: a random n x m matrix with unit columns."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n, m))
    return dictionary_from_matrix(raw, ParameterGrid.uniform(0, 1, m))


@pytest.fixture
def small():
    return small_dictionary()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
