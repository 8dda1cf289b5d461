"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import pytest

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    details = getattr(item.module, "DETAILS", {})
    detail = details.get(item.name) or (str(call.excinfo.value).splitlines()[0] if call.excinfo else "")
    _ACCEPTANCE.append((marker.args[0], report.passed, detail))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
