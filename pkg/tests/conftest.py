"""Shared fixtures and the per-criterion acceptance summary."""
from __future__ import annotations

import time

import pytest

CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n = marker.args[0]
    entry = CRITERIA.setdefault(n, {"status": "PASS", "detail": ""})
    if rep.skipped:
        entry["status"] = "NOT ASSERTED"
        entry["detail"] = str(rep.longrepr[-1]).removeprefix("Skipped: ")
    elif rep.failed:
        entry["status"] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        e = CRITERIA[n]
        line = f"criterion {n}: {e['status']}"
        if e["detail"]:
            line += f" ({e['detail']})"
        terminalreporter.write_line(line)


def note(n: int, detail: str) -> None:
    """Attach measured values to a criterion's summary line."""
    entry = CRITERIA.setdefault(n, {"status": "PASS", "detail": ""})
    entry["detail"] = f"{entry['detail']}; {detail}" if entry["detail"] else detail


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start
