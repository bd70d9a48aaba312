import numpy as np
import pytest
from hypothesis import settings

from atomarray import SystemConfig, build_system, from_positions

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def dimer_config():
    return SystemConfig(n_perp=2, a1=1 / 3, delta_a=0.1, L=0.1, delta_half=-1.0, dimer_mode=True)


@pytest.fixture
def dimer_system(dimer_config):
    return build_system(dimer_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def single_atom(detuning=0.0):
    return from_positions([[0.0, 0.0, 0.0]], [detuning])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
