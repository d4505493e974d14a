import numpy as np
import pytest

from unires.diffusion import make_schedule


@pytest.fixture(scope="session")
def sched():
    return make_schedule()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def random_image(rng, channels=3, size=16):
    return rng.uniform(0.0, 1.0, size=(channels, size, size))


@pytest.fixture()
def image(rng):
    return random_image(rng)
