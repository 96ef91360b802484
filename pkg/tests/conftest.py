from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from amdprog.cohort import EyeSeries, VisitRecord  # noqa: E402
from amdprog.synthgen import step_to_grade4  # noqa: E402


def visit(step: int, day: int, pid: str = "P1", eye: str = "OD", **kw) -> VisitRecord:
    return VisitRecord(pid, eye, day, step_to_grade4(step), step, **kw)


def series(steps, days=None, pid: str = "P1", eye: str = "OD") -> EyeSeries:
    days = list(range(0, 182 * len(steps), 182)) if days is None else list(days)
    return EyeSeries(pid, eye, tuple(visit(s, d, pid, eye) for s, d in zip(steps, days)))


@pytest.fixture
def make_series():
    return series


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
