import numpy as np
import pytest

from clusterlab.potentials import (HegselmannKrause, PiecewiseParabolic,
                                   PotentialSpec)


@pytest.fixture
def hk():
    return HegselmannKrause()


@pytest.fixture
def pp():
    return PiecewiseParabolic(alpha=1.0, beta=3.0, a=0.5)


@pytest.fixture
def hk_spec():
    def make(gamma=100.0, ell=0.1):
        return PotentialSpec(family=HegselmannKrause(), gamma=gamma, ell=ell)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
