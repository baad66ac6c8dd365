"""Shared pytest plumbing: the acceptance-criteria summary section."""

# test_acceptance appends one line per criterion; printed after the run so the
# lines survive output capture
criterion_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in criterion_lines:
            terminalreporter.write_line(line)
