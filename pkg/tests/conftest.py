import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "parafun", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("parafun")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if rep.when != "call" or "criterion" not in props:
                continue
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((props["criterion"], status, props.get("detail", "")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), status, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {num:2d} {status:4s} {name}: {detail}")
