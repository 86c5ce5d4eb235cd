import numpy as np
import pytest

from metastable.environment import mwell_env, paired_tent_env


@pytest.fixture
def tent_env():
    return paired_tent_env(1.0, 1.0, seed=7)


@pytest.fixture
def three_well_env():
    beta = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [0.0, 1.0, 0.0]])
    return mwell_env(beta, seed=11)
