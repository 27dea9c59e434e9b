"""Shared pytest plumbing.

The acceptance tests register one PASS/FAIL line each; printing them from a
terminal-summary hook keeps them visible in the default (captured) pytest
output.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
