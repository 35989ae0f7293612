import numpy as np
import pytest
import torch
from hypothesis import settings

from deephybrid.synthworld import gen_world

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_world():
    return gen_world(3, 20, 2, 400)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
