from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from iotdiag.assets import reference_model

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def model():
    return reference_model()


_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): acceptance criterion n")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    n, name = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        # a criterion spanning several tests fails if any of them does
        if _criteria.get(n, (name, "PASS"))[1] == "PASS":
            _criteria[n] = (name, "PASS" if report.passed else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result()._criterion = m.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        name, verdict = _criteria[n]
        terminalreporter.write_line(f"{verdict}  criterion {n:>2}: {name}")
