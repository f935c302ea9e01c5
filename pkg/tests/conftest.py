import numpy as np
import pytest

from dccs.data_model import DeformationField, DynamicDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_dataset(rng, nt=6, ny=8, nx=8, real=False):
    vals = rng.standard_normal((nt, ny, nx))
    if not real:
        vals = vals + 1j * rng.standard_normal((nt, ny, nx))
    return DynamicDataset(vals)


def random_field(rng, nt=6, ny=8, nx=8, scale=1.5):
    return DeformationField(scale * rng.standard_normal((nt, ny, nx)),
                            scale * rng.standard_normal((nt, ny, nx)))
