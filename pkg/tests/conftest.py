import numpy as np
import pytest

from robust_sensing.model import SensingProblem


def random_problem(rng, n=5, m=3, k=8, s=None, noise=0.0):
    """Gaussian blocks; the first ``s`` sensors see ``A x0`` (plus noise)."""
    s = k if s is None else s
    A = rng.standard_normal((k * m, n))
    x0 = rng.standard_normal(n)
    b = A @ x0 + noise * rng.standard_normal(k * m)
    b[s * m:] = rng.standard_normal((k - s) * m) * 3.0
    return SensingProblem(A, b, m), x0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
