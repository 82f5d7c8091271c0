"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary.

Acceptance tests carry ``@pytest.mark.acceptance("<id>: <title>")`` and may
attach measured values with ``record_property("detail", "...")``.
"""

import pytest

_RESULTS = []
_SETUP_SECS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if rep.when == "setup":
        # shared experiment runs execute in fixture setup
        _SETUP_SECS[item.nodeid] = rep.duration
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        secs = rep.duration + (_SETUP_SECS.get(item.nodeid, 0.0) if rep.when == "call" else 0.0)
        _RESULTS.append((marker.args[0], rep.outcome, detail, secs))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, outcome, detail, secs in sorted(_RESULTS):
        status = "PASS" if outcome == "passed" else "FAIL"
        tail = f" [{detail}]" if detail else ""
        tr.write_line(f"{status}  {name} ({secs:.1f}s){tail}")
