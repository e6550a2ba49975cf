import pytest

CRITERIA = range(1, 11)
_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or (report.when == "setup" and not report.passed):
        ok = report.passed
        _outcomes.setdefault(n, []).append((item.name, ok, report.longreprtext.splitlines()[-1:]
                                            if not ok else []))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in CRITERIA:
        results = _outcomes.get(n)
        if not results:
            tr.write_line(f"criterion {n}: NOT RUN")
            continue
        failed = [(name, why) for name, ok, why in results if not ok]
        status = "PASS" if not failed else "FAIL"
        names = ", ".join(name for name, _, _ in results)
        tr.write_line(f"criterion {n}: {status} ({names})")
        for name, why in failed:
            tr.write_line(f"    {name}: {' '.join(why)}")
    tr.write_line("criterion 11: not testable here (full-corpus, multi-session protocol); see README")
