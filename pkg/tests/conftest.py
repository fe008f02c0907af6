import numpy as np
import pytest

from genrestore.transforms import ImageShape

BLUR_KERNEL = np.array([1.0187, -0.5933, -0.3501, 0.4635, -0.24])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def shape():
    return ImageShape(8, 8, 3)
