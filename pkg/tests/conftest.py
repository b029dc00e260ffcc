import numpy as np
import pytest
from hypothesis import settings

from glintlab import ltc

# first calls compile numba kernels, so wall-clock deadlines are meaningless
settings.register_profile("glintlab", deadline=None)
settings.load_profile("glintlab")


@pytest.fixture(scope="session")
def table():
    return ltc.load_default_table("ggx")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Remember one acceptance result; printed in the terminal summary."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
