import numpy as np
import pytest

from handkit import bio_dof
from handkit.hand_model import make_desk_hand, make_desk_hand_small


@pytest.fixture(scope="session")
def desk():
    return make_desk_hand()


@pytest.fixture(scope="session")
def desk_small():
    return make_desk_hand_small()


@pytest.fixture(scope="session")
def limits():
    return bio_dof.DofLimits.default()


@pytest.fixture(scope="session")
def axes(desk):
    return bio_dof.derive_axes(desk)


@pytest.fixture(scope="session")
def axes_small(desk_small):
    return bio_dof.derive_axes(desk_small)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
