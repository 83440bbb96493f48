import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import diffusion_pinn  # noqa: F401  (enables float64 before any jax use)

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report -------------------------------------------------

_CRITERIA = {}


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records and prints a criterion line, then asserts."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def check(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.setdefault(number, []).append((bool(ok), line))
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        for _, line in _CRITERIA[number]:
            terminalreporter.write_line(line)
