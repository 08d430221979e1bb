import numpy as np
import pytest

from nodulesynth import SemanticLayout, VoxelVolume, make_schedule


@pytest.fixture(scope="session")
def cosine1000():
    return make_schedule("cosine", 1000)


@pytest.fixture(scope="session")
def cosine100():
    return make_schedule("cosine", 100)


@pytest.fixture(scope="session")
def linear1000():
    return make_schedule("linear", 1000)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def small_layout():
    """8^3 layout with a 3^3 nodule block inside a lung slab."""
    labels = np.zeros((8, 8, 8), dtype=np.uint8)
    labels[1:7, 1:7, 1:7] = 1
    labels[2:5, 2:5, 2:5] = 2
    return SemanticLayout(labels)


@pytest.fixture()
def small_volume(rng):
    return VoxelVolume(rng.standard_normal((8, 8, 8)))
