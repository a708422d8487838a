"""Prints one PASS/FAIL line per acceptance criterion at the end of a run.

Acceptance tests are named ``test_criterion_NN_*`` and may attach a short
``measured`` string through ``record_property``.
"""

import re

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")
_results = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or (report.when != "call" and not report.failed and not report.skipped):
        return
    measured = dict(report.user_properties).get("measured", "")
    if report.when == "call" or report.outcome != "passed":
        _results[int(m.group(1))] = (m.group(2).replace("_", " "), report.outcome.upper(), measured)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        name, outcome, measured = _results[number]
        word = "PASS" if outcome == "PASSED" else "FAIL" if outcome == "FAILED" else outcome
        line = f"criterion {number:2d} {word}: {name}"
        terminalreporter.write_line(f"{line} ({measured})" if measured else line)
