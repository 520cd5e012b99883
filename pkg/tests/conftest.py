def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the release-gate verdict lines after the run, outside capture."""
    try:
        from test_acceptance import REPORT_LINES
    except Exception:
        return
    if REPORT_LINES:
        terminalreporter.section("release gate")
        for line in REPORT_LINES:
            terminalreporter.write_line(line)
