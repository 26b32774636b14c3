import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# outcome per acceptance criterion number: (title, all_passed)
_criteria = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(num, title): ties a test to one numbered acceptance "
        "criterion; the terminal summary prints one PASS/FAIL line per "
        "criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    num, title = marker.args
    if rep.skipped:
        _criteria.setdefault(num, (title, None))
        return
    prev_title, prev_ok = _criteria.get(num, (title, True))
    ok = (prev_ok is not False) and rep.passed
    _criteria[num] = (title, ok)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        title, ok = _criteria[num]
        if ok is None:
            verdict = "SKIP"
        else:
            verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {title} ... {verdict}")
