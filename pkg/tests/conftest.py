import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Re-emit the acceptance criterion lines where they survive output
    capture, one line per criterion."""
    mod = (sys.modules.get("test_acceptance")
           or sys.modules.get("tests.test_acceptance"))
    lines = getattr(mod, "RESULTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
