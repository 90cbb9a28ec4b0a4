from dataclasses import replace

import numpy as np
import pytest

from podn.model import ModelConfig, init_net
from podn.prototypes import PrototypeBank
from utils.config import DataSettings, ExperimentConfig, load_settings
from utils.data_processing import generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net():
    config = ModelConfig(input_dim=5, hidden_dims=(6, 4), n_categories=3, seed=7)
    return init_net(config, ["a", "b", "c"])


@pytest.fixture
def small_bank(rng):
    return PrototypeBank(rng.normal(size=(3, 3)), np.abs(rng.normal(size=3)), ["a", "b", "c"])


@pytest.fixture
def toy_dataset():
    """Four well separated clusters in 6 dimensions."""
    return generate_synthetic(n_clusters=4, dim=6, per_cluster=40, separation=8.0, sigma=1.0, seed=3)


@pytest.fixture(scope="session")
def quick_config() -> ExperimentConfig:
    """Five clusters, three known: end-to-end runs finish in seconds."""
    defaults = load_settings(None)
    return replace(
        defaults,
        data=DataSettings(n_clusters=5, dim=6, per_cluster=40, separation=8.0, sigma=1.0,
                          known_count=3, min_incremental=10, test_fraction=0.25),
        hidden_dims=(16,),
        train=replace(defaults.train, epochs=15, batch_size=16),
        incremental=replace(defaults.incremental, finetune_epochs=5),
        out_dir=None,
    )
