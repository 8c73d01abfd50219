import random

import pytest

from sovid.config import NodeConfig
from sovid.dpki import keys


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


@pytest.fixture
def keypair():
    return keys.generate_keypair(b"\x11" * 32)


def make_sim(n, seed=0, **config_kwargs):
    """Convenience used across test modules."""
    from sovid.sim.core import SimNetwork
    config = NodeConfig(**config_kwargs)
    return SimNetwork(n, seed=seed, config=config)
