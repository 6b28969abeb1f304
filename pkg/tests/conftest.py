import sys

import numpy as np
import pytest

from delayimpulse import instances, iterate
from delayimpulse.config import build_problem
from delayimpulse.model import ChainModel, GridSpec, ImpulseSpec, Problem, RewardSpec


@pytest.fixture
def e1():
    return instances.e1()


@pytest.fixture
def e1_stack(e1):
    return iterate.solve(e1, tolerance=1e-300)


def make_problem(P, states, impulses, h, gamma, N, d, r, dt=1.0, n_max=1, fixed_cost=1.0,
                 variable=None, initial=0, tail_mode="zero", tail_value=0.0):
    imp = np.asarray(impulses, dtype=float)
    p = imp.shape[0]
    return Problem(
        grid=GridSpec(dt, N, d, r, tail_mode, tail_value),
        chain=ChainModel(np.asarray(states, dtype=float), np.asarray(P, dtype=float), initial),
        impulses=ImpulseSpec(imp, fixed_cost, np.zeros(p) if variable is None else np.asarray(variable)),
        reward=RewardSpec(h, gamma),
        n_max=n_max,
    )


@pytest.fixture
def zero_problem():
    return build_problem(instances.zero_reward_config())[0]


@pytest.fixture
def const_problem():
    return build_problem(instances.constant_reward_config(1.5))[0]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "SUMMARY_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
