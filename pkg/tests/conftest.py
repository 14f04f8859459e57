"""Collects per-criterion outcomes from tests/test_acceptance.py into one summary block."""
from collections import OrderedDict

import pytest

_OUTCOMES: "OrderedDict[int, list]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n = marker.args[0]
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _OUTCOMES.setdefault(n, []).append((call.excinfo is None, item.name, detail))


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        rows = _OUTCOMES[n]
        ok = all(r[0] for r in rows)
        details = " | ".join(r[2] for r in rows if r[2])
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {details}")
