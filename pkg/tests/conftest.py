"""Suite-wide pytest wiring.

The acceptance tests record one verdict line per numbered criterion here;
replaying them after the summary keeps them visible even though pytest
captures stdout of passing tests.
"""

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
