from importlib import resources

import numpy as np
import pytest
from hypothesis import settings

from sigqueue import model, sim

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# every simulation in the session reports its constant-input window statistics here
WINDOW_LOG: list = []
sim.add_window_observer(WINDOW_LOG.append)

# acceptance outcome lines, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def data_path(name: str):
    return resources.files("sigqueue").joinpath("data", name + ".json")


def load(name: str) -> model.Network:
    return model.load_network(data_path(name))


@pytest.fixture
def single_green():
    return load("single_green")


@pytest.fixture
def two_green():
    return load("two_green")


@pytest.fixture
def chain():
    return load("chain")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
