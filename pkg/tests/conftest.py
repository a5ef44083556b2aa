import numpy as np
import pytest

from platoon_potential import ModelParams, PlatoonState, PotentialSpec


@pytest.fixture
def params():
    return ModelParams()


@pytest.fixture
def hill_spec():
    return PotentialSpec.performance(0.01, 12.0, 4.0)


def random_state(rng, n=7, spacing_range=(8.0, 12.0), speed_range=(27.0, 33.0)):
    return PlatoonState.from_spacings(rng.uniform(*spacing_range, n - 1), rng.uniform(*speed_range, n))
