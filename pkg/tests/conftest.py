import sys


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criterion lines after the run, whatever the capture mode."""
    lines = []
    for mod in list(sys.modules.values()):
        if getattr(mod, "__name__", "").endswith("test_acceptance"):
            lines = getattr(mod, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
