"""Per-criterion summary for the acceptance suite.

Tests tagged ``@pytest.mark.criterion(n, title)`` are grouped by number; a
criterion passes only if every test carrying its number passed.
"""
import pytest

_results: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _results.setdefault(number, {"title": title, "passed": True, "ran": False, "failures": []})
    if report.when == "call" or report.failed:
        entry["ran"] = True
        if report.failed:
            entry["passed"] = False
            entry["failures"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        r = _results[number]
        status = "PASS" if r["passed"] and r["ran"] else "FAIL"
        line = f"criterion {number:>2} {status}  {r['title']}"
        if r["failures"]:
            line += f"  (failed: {', '.join(r['failures'])})"
        terminalreporter.write_line(line)
