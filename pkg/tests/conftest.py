import numpy as np
import pytest
from hypothesis import settings

from momentpi.moments import NormalizedPlantParams, PlantParams

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def ref_plant():
    # mRNA/protein rates of the worked example; k_r is irrelevant for the loops
    return PlantParams(k_r=0.0, gamma_r=0.03, k_p=0.06, gamma_p=0.0066)


@pytest.fixture
def ref_normalized():
    return NormalizedPlantParams(gamma_r0=0.03, gamma_p=0.0066, k_p=0.06, b=0.9587)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
