import numpy as np
import pytest

from gridgroup.power import enumerate_contingencies, fixture_path, load_network


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope='session')
def tri():
    return load_network(fixture_path('case3tri'))


@pytest.fixture(scope='session')
def ring():
    return load_network(fixture_path('case10ring'))


@pytest.fixture(scope='session')
def ring_contingencies(ring):
    return enumerate_contingencies(ring)


@pytest.fixture(scope='session')
def tri_contingencies(tri):
    return enumerate_contingencies(tri)


@pytest.fixture(scope='session')
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section('acceptance criteria')
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
