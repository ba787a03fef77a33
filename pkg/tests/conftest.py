import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crashvol.kinematics import KinematicsTrace  # noqa: E402
from crashvol.likelihood import EventDataset, ModelSpec, Term  # noqa: E402
from crashvol.synth import GroundTruth, bernoulli, normal, simulate_events, uniform  # noqa: E402


def make_trace(duration, event_id="E1", speed=30.0, along=None, alat=None, dt=0.1):
    n = int(round(duration / dt))
    t = np.round(np.arange(1, n + 1) * dt, 10)
    sp = np.full(n, speed) if np.isscalar(speed) else np.asarray(speed, dtype=float)
    a = np.zeros(n) if along is None else np.asarray(along, dtype=float)
    b = np.zeros(n) if alat is None else np.asarray(alat, dtype=float)
    return KinematicsTrace(event_id, t, sp, a, b)


@pytest.fixture
def rich_spec():
    """Every parameter class: constants, fixed, random with het mean and het variance."""
    return ModelSpec((
        Term("x1", "MC", True, "normal", ("z",), ("h",)),
        Term("x2", "PRC", True, "normal"),
        Term("x3", "SC"),
        Term("z", "SC"),
    ))


@pytest.fixture
def rich_theta():
    return np.array([0.2, -0.5, -1.0, 0.8, -0.4, 0.5, 0.3, 0.6, 0.4, -0.3, 0.2])


def rich_data(spec, theta, n, seed=1):
    gens = {"x1": normal(0, 1), "x2": uniform(0, 2), "x3": normal(0, 1), "z": bernoulli(0.5), "h": bernoulli(0.3)}
    return simulate_events(GroundTruth(spec, theta, gens, n, seed))


@pytest.fixture
def ten_events(rich_spec, rich_theta):
    return rich_data(rich_spec, rich_theta, 10, seed=7)


def dataset(outcomes, **cols):
    ids = tuple(f"E{i}" for i in range(len(outcomes)))
    return EventDataset(ids, np.array(outcomes, dtype=object), cols)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
