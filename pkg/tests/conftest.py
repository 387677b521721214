import pytest

from tribranch.data import SyntheticSceneConfig, export_synthetic_dataset
from tribranch.harness import train
from tribranch.harness.runconfig import RunConfig

TOY_SCENES = 4
TOY_SEED = 0


@pytest.fixture(scope="session")
def toy_dataset_cfg(tmp_path_factory):
    """Four 64x64 synthetic scenes in the flat layout."""
    root = tmp_path_factory.mktemp("toy_data")
    return export_synthetic_dataset(root, TOY_SCENES, TOY_SEED,
                                    SyntheticSceneConfig())


@pytest.fixture(scope="session")
def short_run(tmp_path_factory, toy_dataset_cfg):
    """A 20-step training run; enough for checkpoint/eval plumbing tests."""
    out = tmp_path_factory.mktemp("short_run")
    config = RunConfig(dataset=toy_dataset_cfg, out_dir=out, network="toy",
                       batch_size=4, iterations=20, val_interval=10, seed=0,
                       learning_rate=1e-3, freeze_batchnorm=False)
    return config, train(config)
