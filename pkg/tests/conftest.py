import numpy as np
import pytest

from ncspec.ncpoly import generator


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def x1():
    return generator(1, 1)


def random_hermitian(rng, n):
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (z + z.conj().T) / 2


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULT_LINES

    if RESULT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in RESULT_LINES:
            terminalreporter.write_line(line)
