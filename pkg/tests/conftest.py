"""
Shared fixtures for toolkit tests
"""

import numpy as np
import pytest

from schemas.params import OvmParams, RunConfig, SimConfig
from traffic.ring_model import build_system


@pytest.fixture
def default_params():
    return OvmParams()


@pytest.fixture
def default_system(default_params):
    return build_system(default_params)


@pytest.fixture
def small_params():
    # same equilibrium spacing as the defaults, four vehicles
    return OvmParams(L=80.0, n=4)


@pytest.fixture
def small_system(small_params):
    return build_system(small_params)


@pytest.fixture
def short_sim():
    return SimConfig(total_time=10.0, n_seeds=4)


@pytest.fixture
def run_config():
    return RunConfig()


@pytest.fixture(scope='session')
def small_h2():
    """H2 solution for the four-vehicle ring (one conic solve per session)"""
    from synthesis.h2 import solve_h2
    return solve_h2(build_system(OvmParams(L=80.0, n=4)))


@pytest.fixture(scope='session')
def default_h2():
    from synthesis.h2 import solve_h2
    return solve_h2(build_system(OvmParams()))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
