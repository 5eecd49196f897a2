import numpy as np
import pytest

from avmae.modelcfg import desk_config
from avmae.synthetic import SyntheticSpec, SyntheticDataset, generate_synthetic_dataset
from avmae.train import TokenCache


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "ds8"
    generate_synthetic_dataset(SyntheticSpec(n_samples=8, seed=1), root)
    return SyntheticDataset(root)


@pytest.fixture(scope="session")
def desk_cfg():
    return desk_config()


@pytest.fixture(scope="session")
def cache(dataset, desk_cfg):
    return TokenCache(dataset, desk_cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
