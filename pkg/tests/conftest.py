import numpy as np
import pytest

from ipwcate.kernels import KernelSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gauss():
    return KernelSpec(order=2, dim=1)


def brute_nw(y, x, z, order, h, skip=None):
    """Direct double-loop Nadaraya-Watson oracle (1-d covariates)."""
    from scipy.stats import norm

    poly = {2: lambda u: 1.0, 4: lambda u: (3 - u * u) / 2,
            6: lambda u: (15 - 10 * u * u + u ** 4) / 8}[order]
    num = den = 0.0
    for i, (yi, xi) in enumerate(zip(y, x)):
        if i == skip:
            continue
        u = (xi - z) / h
        w = poly(u) * norm.pdf(u) / h
        num += yi * w
        den += w
    return num, den


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
