"""Shared test plumbing.

The terminal-summary hook prints one PASS/FAIL line per acceptance
criterion at the end of a run, so the acceptance verdicts are visible
at a glance even inside a long verbose report.
"""

from __future__ import annotations

_ACCEPTANCE_FILE = "test_acceptance.py"
_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if _ACCEPTANCE_FILE not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance_results[name] = report.outcome
    elif report.failed:
        # setup/teardown crash: count it as a failure of the criterion
        _acceptance_results[name] = "failed"
    elif report.when == "setup" and report.skipped:
        _acceptance_results[name] = "skipped"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance_results):
        outcome = _acceptance_results[name]
        label = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{label}: {name}")
