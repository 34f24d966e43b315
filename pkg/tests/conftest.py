import numpy as np
import pytest

from wpo_score.checks import random_model
from wpo_score.rng import stream


@pytest.fixture
def rng():
    return stream(1234, "check", 99)


@pytest.fixture
def model2d(rng):
    return random_model(rng, 2, 5)


def standard_gaussian_model(d=2, beta=1.0, horizon=1.0):
    """One kernel at the origin with ``Gamma = I``."""
    from wpo_score.kernel import KernelModel
    from wpo_score.precision import TableProvider, isotropic_raw

    centers = np.zeros((1, d))
    provider = TableProvider(centers, isotropic_raw(d, 1.0)[None, :])
    return KernelModel(centers, provider, beta=beta, horizon=horizon)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
