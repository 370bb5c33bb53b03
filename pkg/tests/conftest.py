import os

import matplotlib
import pytest
from hypothesis import HealthCheck, settings

from horizon.limitset import SamplingPlan

matplotlib.use("Agg")

settings.register_profile(
    "horizon",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "horizon"))


@pytest.fixture
def plan():
    return SamplingPlan()


@pytest.fixture
def small_plan():
    """A short plan for property tests on one-dimensional functions."""
    return SamplingPlan(levels=6, dirs_per_level=16)


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion
# ---------------------------------------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    n, title = mark.args
    ok = call.excinfo is None
    key = (n, title)
    _CRITERIA.setdefault(key, []).append((item.name, ok))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), runs in sorted(_CRITERIA.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        status = "PASS" if all(ok for _, ok in runs) else "FAIL"
        failed = [name for name, ok in runs if not ok]
        tail = f"  (failed: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {n:>2} {status}  {title}{tail}")
