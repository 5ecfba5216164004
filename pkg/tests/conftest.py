import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cdgc.graph import build_graph, ntu_graph

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def ntu():
    return ntu_graph()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def path3():
    # 0 - 1 - 2, center 0
    return build_graph(3, [(0, 1), (1, 2)], 0)


# acceptance verdicts, filled by tests/test_acceptance.py and printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
