from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from hodgevortex.surface import ConformalFactor, make_lattice, two_mode_metric

settings.register_profile("repo", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("repo")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def square():
    return make_lattice((1.0, 0.0), (0.0, 1.0))


@pytest.fixture(scope="session")
def sheared():
    return make_lattice((1.0, 0.0), (0.5, 1.0))


@pytest.fixture(scope="session")
def metric():
    return two_mode_metric()


@pytest.fixture(scope="session")
def flat():
    return ConformalFactor.flat()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
