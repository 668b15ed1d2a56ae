import socket
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from reqpc.similarity import Embedder, HashingEmbeddingProvider  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by the test")
    config._criteria = {}


@pytest.fixture(autouse=True, scope="session")
def no_network():
    """Every provider in the suite is a mock; any real connection attempt is a bug."""

    def refuse(self, *args, **kwargs):
        raise RuntimeError("network access is disabled in the test suite")

    original = socket.socket.connect
    socket.socket.connect = refuse
    yield
    socket.socket.connect = original


@pytest.fixture
def embedder():
    return Embedder(HashingEmbeddingProvider(64))


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    criteria = report._criteria_store
    number, text = marker
    failed = report.failed or (report.when == "call" and report.outcome != "passed")
    prev = criteria.get(number, (text, True))
    if report.when == "call" or failed:
        criteria[number] = (text, prev[1] and not failed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report._criterion = tuple(mark.args)
        report._criteria_store = item.config._criteria


def pytest_terminal_summary(terminalreporter, config):
    criteria = config._criteria
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria):
        text, ok = criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}")
