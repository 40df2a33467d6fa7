import numpy as np
import pytest

from oimep import Example, NetworkParams, OimParams, encode_target, init_network


def random_machine(rng, n=None) -> OimParams:
    """Random dense symmetric machine with entries in [-1, 1]."""
    if n is None:
        n = int(rng.integers(2, 11))
    j = rng.uniform(-1.0, 1.0, (n, n))
    j = (j + j.T) / 2.0
    np.fill_diagonal(j, 0.0)
    return OimParams(
        coupling=j,
        bias=rng.uniform(-1.0, 1.0, n),
        sync=rng.uniform(-1.0, 1.0, n),
    )


def toy_net(rng, n_x=4, n_h=3, n_y=2) -> NetworkParams:
    return init_network(n_x, n_h, n_y, seed=int(rng.integers(0, 2**31)))


def toy_example(rng, n_x=4, n_y=2) -> Example:
    return Example(
        x=rng.uniform(0.0, 1.0, n_x),
        target=encode_target(int(rng.integers(0, n_y)), n_y),
        label=0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
