import pytest

from gepower import solver
from gepower.model import ChannelParams, ProblemSpec, RewardSchedule


def make_spec(lam0=0.1, lam1=0.9, beta=0.9, R=(3.0, 2.0, 1.78), C=(1.5, 1.0, 0.89)):
    return ProblemSpec(ChannelParams(lam0, lam1), RewardSchedule(R, C), beta)


@pytest.fixture(scope="session")
def base_spec():
    """Reference 3-channel instance used throughout the suite."""
    return make_spec()


@pytest.fixture(scope="session")
def solved11(base_spec):
    grid = solver.build_grid(base_spec, 11)
    v = solver.value_iterate(base_spec, grid, 1e-8)
    return v, solver.extract_policy(base_spec, v)


@pytest.fixture(scope="session")
def solved21(base_spec):
    grid = solver.build_grid(base_spec, 21)
    v = solver.value_iterate(base_spec, grid, 1e-8)
    return v, solver.extract_policy(base_spec, v)
