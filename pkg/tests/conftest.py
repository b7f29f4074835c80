from hypothesis import HealthCheck, settings

# compiled kernels make the first example slow; timing is not under test
settings.register_profile("lavt", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lavt")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(RESULTS, key=lambda c: int(c[1:])):
            terminalreporter.write_line(RESULTS[cid])
