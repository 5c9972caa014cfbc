import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []
_gate_failed = []


def pytest_configure(config):
    config.addinivalue_line("markers", "gate: trivial-model exactness checks that run first "
                                       "and gate the rest of the suite")


def pytest_collection_modifyitems(session, config, items):
    items.sort(key=lambda item: 0 if item.get_closest_marker("gate") else 1)


def pytest_runtest_makereport(item, call):
    if call.when == "call" and call.excinfo is not None and item.get_closest_marker("gate"):
        _gate_failed.append(item.nodeid)


def pytest_runtest_setup(item):
    if _gate_failed and not item.get_closest_marker("gate"):
        pytest.skip(f"trivial-model gate failed: {_gate_failed[0]}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
