from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def write(tmp_path):
    """Write ``text`` to a fresh file under tmp_path and return its path."""
    counter = iter(range(10**6))

    def _write(text: str, suffix: str = ".txt"):
        p = tmp_path / f"f{next(counter)}{suffix}"
        p.write_text(text)
        return p

    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the lines are printed in the terminal summary."""

    def record(label: str, ok: bool, detail: str, expected_failure: bool = False) -> bool:
        status = ("XFAIL" if expected_failure else "FAIL") if not ok else "PASS"
        line = f"criterion {label:<4} {status:<5} {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
