import numpy as np
import pytest


def naive_convolve(a, b):
    d = len(a)
    return np.array([sum(a[k] * b[(j - k) % d] for k in range(d)) for j in range(d)])


def unit(rng, d, n=None):
    x = rng.standard_normal((d,) if n is None else (n, d))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


# criterion number -> one-line verdict, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
