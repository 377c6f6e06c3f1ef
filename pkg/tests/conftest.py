import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bwmeta.simulate import ExperimentConfig, build_dataset  # noqa: E402
from bwmeta.wavelet import transform_dataset  # noqa: E402

TINY = {
    "layout": {"n": 3, "period": 0.5},
    "excitation": {"dt": 0.01, "strong_duration": 1.28, "pad_duration": 1.28, "intensity": 4.0},
    "counts": {"train": 4, "val": 2, "test": 2},
}


@pytest.fixture(scope="session")
def tiny_config() -> ExperimentConfig:
    return ExperimentConfig.from_dict(TINY)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_config):
    return build_dataset(tiny_config, tmp_path_factory.mktemp("tiny"), master_seed=11)


@pytest.fixture(scope="session")
def tiny_coeffs(tiny_dataset):
    return transform_dataset(tiny_dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
