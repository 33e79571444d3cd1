import sys

import numpy as np
import pytest

from fisherhmc.hmc import available_backends


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_spd(rng, d, spread=1.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(spread * rng.standard_normal(d))
    a = (q * lam) @ q.T
    return 0.5 * (a + a.T)


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
