import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "treeforge", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("treeforge")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sparse_dense(rng, n, p, density):
    """Dense array with N(0,1) non-zeros at the given density."""
    X = rng.standard_normal((n, p))
    X[rng.random((n, p)) >= density] = 0.0
    return X


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
