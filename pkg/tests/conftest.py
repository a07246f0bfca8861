"""Shared pytest hooks.

The acceptance tests register one PASS/FAIL line each; the lines are
replayed as a checklist section at the end of the run so they survive
output capture.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance checklist")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
