"""Shared fixtures.

Every call of ``run_fr2sid`` made anywhere in the suite is recorded so the
acceptance test on singular-value agreement can check all of them at the
end of the session.
"""

from __future__ import annotations

import functools

import numpy as np
import pytest

import fr2sid
import fr2sid.cli
import fr2sid.identify

SV_RECORDS: list[tuple[str, float]] = []
ACCEPTANCE: dict[int, tuple[str, str]] = {}

_original_run = fr2sid.identify.run_fr2sid


@functools.wraps(_original_run)
def _recording_run(*args, **kwargs):
    ident = _original_run(*args, **kwargs)
    dev = ident.diagnostics.get("sv_deviation")
    if dev is not None:
        SV_RECORDS.append((_current_test[0], float(dev)))
    return ident


_current_test = ["<setup>"]
for _mod in (fr2sid.identify, fr2sid, fr2sid.cli):
    _mod.run_fr2sid = _recording_run


@pytest.fixture(autouse=True)
def _track_test_name(request):
    _current_test[0] = request.node.nodeid
    yield


def pytest_collection_modifyitems(config, items):
    # the singular-value audit must see the runs of every other test
    last = [it for it in items if "sv_agreement_all_runs" in it.name]
    rest = [it for it in items if it not in last]
    items[:] = rest + last


@pytest.fixture
def acceptance(request):
    """Record the outcome of one numbered acceptance criterion.

    Usage: ``acceptance(3, "median NEE q=1 < q=0", detail)`` before the
    assertions; the entry is marked PASS only if the test body finishes.
    """
    entries = []

    def record(number: int, title: str, detail: str = "") -> None:
        entries.append((number, title, detail))

    yield record
    failed = getattr(request.node, "_call_failed", True)
    for number, title, detail in entries:
        ACCEPTANCE[number] = ("FAIL" if failed else "PASS", f"{title}. {detail}".strip())


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item._call_failed = rep.failed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, text = ACCEPTANCE[number]
        terminalreporter.write_line(f"{status} criterion {number}: {text}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
