import numpy as np
import pytest

from ticusum.models import BoltzmannPair, boltzmann, mvn10


@pytest.fixture
def boltz():
    return boltzmann()


@pytest.fixture
def mvn():
    return mvn10()


@pytest.fixture
def identical():
    """A pair with identical pre/post densities: log w is exactly zero."""
    return BoltzmannPair(1.3, 1.3, name="identical")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_rng(*path):
    return np.random.default_rng(np.random.SeedSequence([20240817, *path]))
