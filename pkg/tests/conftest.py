import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from convdyn.core import build_catalog

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def cat4():
    return build_catalog(4)


@pytest.fixture(scope="session")
def cat2():
    return build_catalog(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ----------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


class _Recorder:
    def __init__(self, number):
        self.number = number
        self.line = None

    def __call__(self, ok, detail):
        self.line = f"criterion {self.number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(self.line)
        return ok


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for the acceptance criterion named in the test function."""
    number = int(request.node.name.split("_")[2])
    rec = _Recorder(number)
    yield rec
    if rec.line is None:
        rec.line = f"criterion {number:2d}: FAIL  did not complete"
    request.config.stash.setdefault(_ACCEPTANCE, {})[number] = rec.line


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
