import os
import re

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> list of (test name, passed, note)
_CRITERIA = {}
_NAME = re.compile(r"test_criterion_(\d+)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = _NAME.search(item.name)
    if not m:
        return
    if rep.when == "call" or (rep.when == "setup" and (rep.skipped or rep.failed)):
        ok = rep.passed and not hasattr(rep, "wasxfail")
        note = "expected failure, see notes" if hasattr(rep, "wasxfail") else ""
        _CRITERIA.setdefault(int(m.group(1)), []).append((item.name, ok, note))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        parts = _CRITERIA[k]
        ok = all(p[1] for p in parts)
        bad = [f"{name}{' (' + note + ')' if note else ''}" for name, good, note in parts if not good]
        tail = "" if ok else "  failing: " + ", ".join(bad)
        tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}{tail}")
