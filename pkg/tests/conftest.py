import numpy as np
import pytest

from semirte.geometry import Discretization, ScatteringModel

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record and print one pass/fail line for an acceptance criterion."""
    def _report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return _report


@pytest.fixture(scope="session")
def disc16():
    return Discretization.unit_disk(h=1 / 16, nv=16)


@pytest.fixture(scope="session")
def disc8():
    return Discretization.unit_disk(h=1 / 8, nv=8)


@pytest.fixture(scope="session")
def iso16(disc16):
    return ScatteringModel.isotropic(disc16.quad)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
