import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from linksig.chansynth import NetworkChannel, default_layout
from linksig.geometry import indoor_default

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_net():
    return NetworkChannel(default_layout(12, (6.0, 6.0), seed=3), indoor_default(), seed=1)


@pytest.fixture(scope="session")
def small_ds(small_net):
    return small_net.dataset(5, 0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
