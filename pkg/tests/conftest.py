import _helpers


def pytest_terminal_summary(terminalreporter):
    if not _helpers.ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number, description in sorted(_helpers.ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"ACCEPTANCE {number} PASS: {description}")
