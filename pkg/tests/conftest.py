import numpy as np
import pytest

from soilcarbon.core import ModelSpec, Pools, Site
from soilcarbon.simulator import SimConfig, example_theta, simulate

ALL_SPECS = [ModelSpec(p, s) for s in Site for p in Pools]


def spec_id(spec):
    return f"{spec.site.name.lower()}-{spec.pools.name.lower()}"


@pytest.fixture(params=ALL_SPECS, ids=spec_id)
def any_spec(request):
    return request.param


@pytest.fixture(scope="session")
def one_pool():
    return ModelSpec(Pools.ONE, Site.TARLEE)


@pytest.fixture(scope="session")
def one_pool_data(one_pool):
    """Dense one-pool Tarlee dataset (T=20) and its ground truth."""
    cfg = SimConfig(one_pool, example_theta(one_pool), horizon=20, seed=1, dense=True)
    return simulate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
