import desk


def pytest_terminal_summary(terminalreporter):
    if desk.CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(desk.CRITERIA):
            terminalreporter.write_line(line)
