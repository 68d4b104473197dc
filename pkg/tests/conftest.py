"""Shared pytest configuration.

Collects the outcome of every acceptance-suite test and prints a one-line
verdict per criterion at the end of the run.
"""

from __future__ import annotations

import re

_ACCEPTANCE_OUTCOMES: dict[str, str] = {}
_CRITERION_RE = re.compile(r"test_c(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    match = _CRITERION_RE.search(report.nodeid)
    if match is None:
        return
    key = match.group(0)
    if report.when == "call":
        _ACCEPTANCE_OUTCOMES[key] = report.outcome
    elif report.failed:  # setup/teardown error counts as a failure
        _ACCEPTANCE_OUTCOMES[key] = "failed"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    def sort_key(name: str):
        match = _CRITERION_RE.search(name)
        return int(match.group(1))
    for key in sorted(_ACCEPTANCE_OUTCOMES, key=sort_key):
        match = _CRITERION_RE.search(key)
        number, slug = match.group(1), match.group(2)
        label = slug.replace("_", " ")
        verdict = "PASS" if _ACCEPTANCE_OUTCOMES[key] == "passed" \
            else "FAIL"
        terminalreporter.write_line(
            f"criterion {number} ({label}): {verdict}")
