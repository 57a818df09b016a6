import sys


def pytest_terminal_summary(terminalreporter):
    # acceptance verdicts are collected while the tests run and shown together
    module = sys.modules.get("test_acceptance")
    if module is not None and module.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(module.VERDICTS):
            terminalreporter.write_line(module.VERDICTS[n])
