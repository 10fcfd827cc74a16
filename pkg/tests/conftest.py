import os

import numpy as np
import pytest
from hypothesis import settings

from ntxsim import DEFAULT_SEED, SEED_ENV

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


_ACCEPTANCE = {}


@pytest.fixture
def acceptance_lines():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])


@pytest.fixture
def seed():
    return int(os.environ.get(SEED_ENV, DEFAULT_SEED))


@pytest.fixture
def rng(seed):
    return np.random.default_rng(seed)
