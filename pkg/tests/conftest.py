import numpy as np
import pytest

from revclt.rng import RngStream


@pytest.fixture
def stream():
    return RngStream(12345, 0)


def direct_geometric(a, n):
    r = 1.0 - a
    return sum(r ** j for j in range(1, n + 1))


def direct_theta(x, n):
    # (1/n) sum_{i=0}^{n-1} sum_{j=0}^{i} r^j sign(x), summed term by term
    r = 1.0 - abs(x)
    s = np.sign(x)
    total = 0.0
    for i in range(n):
        total += sum(r ** j for j in range(i + 1))
    return s * total / n


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
