import numpy as np
import pytest

from smve.model import SparseProblem, build_model

# filled by tests/test_acceptance.py, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0].lstrip("#"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ssnm10():
    """H = I, N = 10, S = 3, sigma2 = 1."""
    return SparseProblem(build_model(np.eye(10), 1.0), S=3)
