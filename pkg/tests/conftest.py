import numpy as np
import pytest
from mvfusion.internal.rate.coding_rate import RateConfig
from tests.constants import EPSILON_SQ


@pytest.fixture(scope="module")
def rate_cfg():
    return RateConfig(EPSILON_SQ)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
