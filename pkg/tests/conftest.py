import numpy as np
import pytest

from elliptical import EllipticalFamily
from simulate import SimConfig, gen_design, simulate_dataset

FAMILIES = [("normal", None), ("student_t", 5.0), ("power_exponential", 0.6)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=FAMILIES, ids=[k for k, _ in FAMILIES])
def family(request):
    kind, shape = request.param
    return EllipticalFamily(kind, shape)


@pytest.fixture
def sim_data():
    """Data drawn from the simulation design at the default true parameters."""
    def make(kind="normal", shape=None, m=1, p=1, n=40, seed=7, eta=1.0):
        cfg = SimConfig(kind=kind, shape=shape, m=m, p=p, q=m * p, n=n, replications=1, seed=seed)
        theta = cfg.true_theta(eta)
        rng = np.random.default_rng(seed)
        return simulate_dataset(cfg, gen_design(cfg), theta, rng), theta
    return make
