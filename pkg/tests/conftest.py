import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from lidarint.pipeline import TrainConfig, build_synthetic_dataset


@pytest.fixture(autouse=True, scope="session")
def _single_blas_thread():
    # Small kernels on few cores: keep timings stable and runs reproducible.
    with threadpool_limits(limits=1):
        yield


@pytest.fixture(scope="session")
def tiny_config():
    """Small grid / few frames; fast enough for per-module tests."""
    return TrainConfig(frames=12, train_frames=8, val_frames=2, test_frames=2,
                       height=32, width=64, epochs=2, seed=7)


@pytest.fixture(scope="session")
def tiny_frames(tiny_config):
    return build_synthetic_dataset(tiny_config)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
