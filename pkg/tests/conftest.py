import numpy as np
import pytest
from hypothesis import settings

from findim.pde import SolverSettings, sample_attractor
from findim.system import example_family

# reproducible property tests
settings.register_profile("findim", derandomize=True, deadline=None)
settings.load_profile("findim")

# short runs: the attractors of the example families are reached by t ~ 2
FAST = SolverSettings(n_modes=32, dt=2e-3, t_end=4.0, transient=2.0, snapshot_every=10)


@pytest.fixture(scope="session")
def commuting():
    return example_family("commuting_family")


@pytest.fixture(scope="session")
def violating():
    return example_family("violating_family")


@pytest.fixture(scope="session")
def commuting_samples(commuting):
    return sample_attractor(commuting, FAST, n_traj=8, seed=0)


@pytest.fixture(scope="session")
def violating_samples(violating):
    return sample_attractor(violating, FAST, n_traj=8, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
