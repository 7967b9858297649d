import numpy as np
import pytest
from hypothesis import settings

from maskforge.volume import LabelVolume

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_label_volume(rng: np.random.Generator, shape=(18, 18, 16), labels=(1, 2, 3, 4), boxes=(8, 25)):
    """Overlapping random boxes of random labels plus scattered single voxels.

    Box sides run 1..8 so component sizes straddle the 64/100-voxel thresholds.
    """
    arr = np.zeros(shape, dtype=np.uint8)
    for _ in range(int(rng.integers(*boxes))):
        sides = rng.integers(1, 9, size=3)
        corner = [int(rng.integers(0, max(1, shape[i] - sides[i] + 1))) for i in range(3)]
        box = tuple(slice(corner[i], corner[i] + int(sides[i])) for i in range(3))
        arr[box] = rng.choice(labels)
    specks = rng.random(shape) < 0.01
    arr[specks] = rng.choice(labels, size=int(specks.sum()))
    return LabelVolume(arr, (1.0, 1.0, 1.0), "rand")


def box_mask(shape, lo, hi):
    m = np.zeros(shape, dtype=bool)
    m[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = True
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
