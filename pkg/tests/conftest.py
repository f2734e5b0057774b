import numpy as np
import pytest

CRITERIA = pytest.StashKey[dict]()
NOTES = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")
    config.stash[CRITERIA] = {}


@pytest.fixture
def note(request):
    """Collect short measurement strings that end up on the criterion's summary line."""
    notes = request.node.stash.setdefault(NOTES, [])
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and not report.failed):
        return
    number, title = mark.args
    notes = "; ".join(item.stash.get(NOTES, []))
    if report.failed and report.longrepr is not None:
        reason = getattr(report.longrepr, "reprcrash", None)
        notes = "; ".join(filter(None, [notes, reason.message.splitlines()[0] if reason else "error"]))
    item.config.stash[CRITERIA][number] = (report.passed, title, notes)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, title, notes = results[number]
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
        terminalreporter.write_line(f"{line} ({notes})" if notes else line)
