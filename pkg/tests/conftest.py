import time
from collections import defaultdict

import pytest

# acceptance reporting: one line per criterion

_criteria: dict[int, dict] = defaultdict(lambda: {"name": "", "ok": True, "seconds": 0.0})


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, name): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    if call.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, name = marker.args
    entry = _criteria[n]
    entry["name"] = name
    entry["seconds"] += call.duration
    if call.excinfo is not None:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2} {status}  {e['name']}  ({e['seconds']:.2f} s)")


class Budget:
    """Context manager asserting a wall-clock limit."""

    def __init__(self, seconds: float):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f} s, budget {self.seconds} s"
        return False


@pytest.fixture
def budget():
    return Budget
