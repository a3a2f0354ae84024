import numpy as np
import pytest

from skyaug.preprocessing.imageio import split_dataset, synth_dataset
from skyaug.segmentation.pls import pairs_to_matrices


@pytest.fixture(scope="session")
def synthetic_pairs():
    """115 synthetic (image, map) pairs at 32x32, the size of the reference dataset."""
    return synth_dataset(115, 32, seed=3)


@pytest.fixture(scope="session")
def synthetic_split(synthetic_pairs):
    return split_dataset(len(synthetic_pairs), seed=7)


@pytest.fixture(scope="session")
def small_fixture():
    """Train/val (X, Y) matrices of a 16x16 synthetic dataset, for PLS and filtering tests."""
    pairs = synth_dataset(60, 16, seed=11)
    split = split_dataset(len(pairs), seed=5)
    train = pairs_to_matrices([pairs[i] for i in split.train_ids])
    val = pairs_to_matrices([pairs[i] for i in split.val_ids])
    return pairs, split, train, val


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
