import numpy as np
import pytest

from degctrl import dynamics, model, spectral

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def jordan():
    return model.preset("jordan-cascade")


@pytest.fixture(scope="session")
def rankdef():
    return model.preset("rank-deficient")


@pytest.fixture(scope="session")
def jordan_basis8(jordan):
    return spectral.compute_basis(jordan, N=2000, M=8)


@pytest.fixture(scope="session")
def rankdef_basis8(rankdef):
    return spectral.compute_basis(rankdef, N=2000, M=8)


@pytest.fixture(scope="session")
def grid64(jordan):
    return dynamics.TimeGrid(64, jordan.T)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
