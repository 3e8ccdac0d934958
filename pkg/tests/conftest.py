"""
Pytest configuration and fixtures for eloqnet tests.
"""

import logging
from pathlib import Path

import numpy as np
import pytest

from eloqnet import fileio
from eloqnet.connectivity import DynamicConnectivity, WindowConfig
from eloqnet.model import ModelConfig
from eloqnet.synthdata import SynthConfig, generate_cohort
from eloqnet.training import TrainConfig

TINY_CONFIG = """\
[synth]
regions = 16
frames = 60
patients = 4
community_sizes = 2,2,2,2
tumor_size = 2,3
task_presence = 1.0,1.0,0.5,1.0
bilateral_fraction = 0.25
active_length = 15
jitter = 0.0
seed = 7

[window]
window_length = 20
stride = 10

[model]
filters = 2
fc_dims = 4,3
lstm_hidden = 3

[train]
epochs = 2
folds = 2
"""


@pytest.fixture
def rng():
    """Seeded generator, fresh for every test."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_model_cfg():
    """Network small enough for finite-difference checks."""
    return ModelConfig(regions=8, filters=2, fc_dims=(4, 3), lstm_hidden=3)


@pytest.fixture
def small_connectivity(rng):
    """Three random symmetric 8x8 matrices with a unit diagonal."""
    a = rng.uniform(0.1, 1.0, size=(3, 8, 8))
    w = 0.5 * (a + a.transpose(0, 2, 1))
    for t in range(3):
        np.fill_diagonal(w[t], 1.0)
    return DynamicConnectivity(matrices=w)


@pytest.fixture
def tiny_synth_cfg():
    return SynthConfig(
        regions=16,
        frames=60,
        patients=4,
        community_sizes=(2, 2, 2, 2),
        tumor_size=(2, 3),
        task_presence=(1.0, 1.0, 0.5, 1.0),
        bilateral_fraction=0.25,
        active_length=15,
        jitter=0.0,
        seed=7,
    )


@pytest.fixture
def tiny_window():
    """Five windows on a 60-frame scan."""
    return WindowConfig(window_length=20, stride=10)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(regions=16, filters=2, fc_dims=(4, 3), lstm_hidden=3)


@pytest.fixture
def tiny_train_cfg():
    return TrainConfig(epochs=2, folds=2, seed=3)


@pytest.fixture
def tiny_cohort(tiny_synth_cfg):
    return generate_cohort(tiny_synth_cfg)


@pytest.fixture
def tiny_config_text():
    """Text of the tiny run configuration, for tests that edit it."""
    return TINY_CONFIG


@pytest.fixture
def tiny_config_file(tmp_path):
    """INI run configuration matching the tiny fixtures."""
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


@pytest.fixture
def cohort_dir(tmp_path, tiny_cohort):
    """The tiny cohort written to disk."""
    logging.info("Writing tiny cohort for tests")
    out = tmp_path / "cohort"
    fileio.write_cohort(out, tiny_cohort)
    return out


@pytest.fixture(scope="session")
def tests_dir():
    return Path(__file__).parent
