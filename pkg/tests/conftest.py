import numpy as np
import pytest

from patpd.core import full_grid


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_grid():
    """8 x 8 image, 16 samples: small enough for dense assembly."""
    return full_grid().with_shape(8, 8, 16)


@pytest.fixture(scope="session")
def small_grid():
    return full_grid().with_shape(16, 24, 32)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
