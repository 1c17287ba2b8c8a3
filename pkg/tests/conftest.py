import numpy as np
import pytest

from elephant_sketch.traffic import TrafficSpec, UniformInt, generate_trace

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, ok, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mixed_trace():
    """Small mixed trace: 2000 flows, 10% elephants."""
    return generate_trace(TrafficSpec(2000, 0.1, UniformInt(1, 19), UniformInt(20, 200), seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
