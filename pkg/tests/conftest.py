import numpy as np
import pytest

from pfedrl.envs import GarnetSpec, build_garnet
from pfedrl.mdp import Mdp, Policy

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    lines = request.config.stash[_ACCEPTANCE_KEY]
    return lines.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def two_state():
    """Two-state, one-action chain with closed-form stationary law and values."""
    p, q = 0.3, 0.1
    kernel = np.array([[[1 - p, p]], [[q, 1 - q]]])
    reward = np.array([[1.0], [-1.0]])
    return Mdp(kernel, reward, gamma=0.9, name="two-state"), Policy.uniform(2, 1), (p, q)


@pytest.fixture
def garnet():
    return build_garnet(GarnetSpec(8, 2, 3), np.random.default_rng(7))
