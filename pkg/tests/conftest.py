import time

import pytest

SUITE_BUDGET_S = 120.0
RUNTIME_CRITERION = "Full test suite runtime"

_started = time.perf_counter()
_verdicts: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.failed:
        _verdicts[name] = False
    elif report.when == "call":
        _verdicts.setdefault(name, report.passed)


def _elapsed():
    return time.perf_counter() - _started


def pytest_sessionfinish(session, exitstatus):
    if _verdicts and _elapsed() >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = pytest.ExitCode.TESTS_FAILED


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, ok in _verdicts.items():
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
    elapsed = _elapsed()
    ok = elapsed < SUITE_BUDGET_S
    tr.write_line(f"{'PASS' if ok else 'FAIL'}  {RUNTIME_CRITERION} ({elapsed:.1f} s, budget {SUITE_BUDGET_S:.0f} s)")
