def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models or reads cached training results")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
