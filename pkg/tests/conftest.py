import os

import pytest

from poissonmat.ingest import synth_zipf_dataset, train_test_split

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def small_synth():
    return synth_zipf_dataset(60, 40, 8, seed=3)


@pytest.fixture(scope="session")
def small_split(small_synth):
    return train_test_split(small_synth, 0.2, seed=3)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, text): acceptance criterion")


_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    key = (marker.args[0], marker.args[1])
    failed = report.failed
    if report.when == "call" or failed:
        _acceptance.setdefault(key, []).append((item.name, not failed))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for (number, text), results in sorted(_acceptance.items()):
        ok = all(passed for _, passed in results)
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {text}")
        for name, passed in results:
            if not passed:
                terminalreporter.write_line(f"         failing check: {name}")
