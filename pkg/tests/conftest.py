import helpers


def pytest_terminal_summary(terminalreporter):
    if helpers.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(helpers.ACCEPTANCE_LINES):
            terminalreporter.write_line(helpers.ACCEPTANCE_LINES[n])
