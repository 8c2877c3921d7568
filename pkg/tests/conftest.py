import numpy as np
import pytest

TOY_M = np.array([0.01, -0.02, 0.03, -0.01])
TOY_I = np.array([0.02, 0.01, -0.01, -0.03])


@pytest.fixture
def toy():
    return TOY_I.copy(), TOY_M.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from _report import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(RESULTS):
            terminalreporter.write_line(line)
