import numpy as np
import pytest

from relboltz.spacetime import conformal_minkowski, diagonal_warped, minkowski


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


@pytest.fixture(scope="session")
def mink2():
    return minkowski(2)


@pytest.fixture(scope="session")
def mink3():
    return minkowski(3)


@pytest.fixture(scope="session")
def warped3():
    return diagonal_warped(3, (1.0, 0.1))


@pytest.fixture(scope="session")
def conformal3():
    return conformal_minkowski(3, 0.0, [0.0, 0.3, 0.0])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
