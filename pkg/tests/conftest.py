"""Shared pytest wiring: the acceptance-criteria summary block.

Tests marked ``criterion(id, label)`` report one verdict line each at the
end of the run, so a full-suite log shows the acceptance gate at a glance.
"""

import pytest

_VERDICTS: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(id, label): acceptance criterion this test decides"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    cid, label = mark.args
    if report.when == "call":
        verdict = "PASS" if report.passed else "FAIL"
        _VERDICTS[cid] = (label, verdict)
    elif report.when == "setup" and report.failed:
        _VERDICTS[cid] = (label, "ERROR")
    elif report.when == "setup" and report.skipped:
        _VERDICTS[cid] = (label, "SKIP")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    width = max(len(label) for label, _ in _VERDICTS.values())
    for cid in sorted(_VERDICTS, key=lambda c: (len(c), c)):
        label, verdict = _VERDICTS[cid]
        terminalreporter.write_line(f"{cid}  {label:<{width}}  {verdict}")
