import numpy as np
import pytest

from extremeseg.volume import Volume


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_volume(rng, shape=(5, 5, 5), spacing=(1.0, 1.0, 1.0)):
    return Volume(rng.random(shape), spacing)
