import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    'default', deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile('default')


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_grid():
    return np.arange(800.0, 1000.01, 1.0)


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get('test_acceptance')
    lines = getattr(module, 'REPORT', None)
    if lines:
        terminalreporter.section('acceptance criteria')
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
