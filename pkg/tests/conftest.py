from __future__ import annotations

import threading
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

_acceptance_results: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(name): marks a test as one acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        _acceptance_results[marker.args[0]] = report.passed


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed in _acceptance_results.items():
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}")


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


class FakeClock:
    """Virtual monotonic clock: sleep() advances time instead of waiting."""

    def __init__(self, start: float = 0.0):
        self._now = start
        self._lock = threading.Lock()

    def monotonic(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self._now += max(seconds, 0.0)


@pytest.fixture
def fake_clock() -> FakeClock:
    return FakeClock()
