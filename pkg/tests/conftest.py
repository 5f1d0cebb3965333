"""Shared test plumbing.

Acceptance tests register one verdict per criterion through ``record_acceptance``;
the terminal-summary hook prints them at the end of the run so the pass/fail ledger
lands in captured output files even when individual tests fail.
"""

from __future__ import annotations

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}
_CRITERIA = range(1, 12)


def record_acceptance(criterion: int, passed: bool, detail: str) -> None:
    _ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in _CRITERIA:
        if n in _ACCEPTANCE:
            ok, detail = _ACCEPTANCE[n]
            verdict = "PASS" if ok else "FAIL"
        else:
            verdict, detail = "NOT RUN", "criterion was not exercised in this session"
        terminalreporter.write_line(f"ACCEPTANCE {n}: {verdict} - {detail}")
