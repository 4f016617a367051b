import numpy as np
import pytest
from hypothesis import settings

from dropbench import synthetic
from dropbench.classifier import ArchConfig, DatasetSplits, TrainConfig, train

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")

SMOKE_T = 128
SMOKE_BLOCK = 32


def small_synthetic(n=400, seed=0):
    cfg = synthetic.SyntheticConfig(n_samples=n, T=SMOKE_T, block_length=SMOKE_BLOCK,
                                    seed=seed)
    return synthetic.generate(cfg)


def splits_of(samples, seed=0):
    tr, va, te = synthetic.split_indices(len(samples), seed=seed)
    return DatasetSplits(train=[samples[i] for i in tr],
                         val=[samples[i] for i in va],
                         test=[samples[i] for i in te])


TINY_ARCH = ArchConfig(conv_units=24, kernel_size=7, conv_strides=(2, 2, 1),
                       dropout_rate=0.1, dense_units=24)


@pytest.fixture(scope="session")
def fixture_dataset():
    """Small but spectrally faithful dataset shared by integration tests."""
    return small_synthetic(n=600, seed=7)


@pytest.fixture(scope="session")
def fixture_splits(fixture_dataset):
    return splits_of(fixture_dataset, seed=7)


@pytest.fixture(scope="session")
def fixture_model(fixture_splits):
    """One trained model reused across attribution/corruption tests."""
    cfg = TrainConfig(epochs=30, learning_rate=0.05, seed=7, arch=TINY_ARCH)
    return train(fixture_splits, cfg)


class FnScorer:
    """Wrap a scalar batch function f([B, M, T]) -> [B] as a 2-class scorer."""

    def __init__(self, fn):
        self.fn = fn

    def score_batch(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        p = np.asarray(self.fn(batch), dtype=np.float64)
        return np.stack([p, 1.0 - p], axis=1)
