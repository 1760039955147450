"""Collects outcomes of tests tagged ``@pytest.mark.criterion`` and prints one line each."""

import pytest

_OUTCOMES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    key = marker.args
    if report.failed:
        _OUTCOMES[key] = "FAIL"
    elif report.when == "call" and report.passed:
        _OUTCOMES.setdefault(key, "PASS")
    elif report.skipped:
        _OUTCOMES.setdefault(key, "SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), status in sorted(_OUTCOMES.items()):
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
