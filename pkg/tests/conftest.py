import numpy as np
import pytest

from pollisim.config import PipelineConfig
from pollisim.kinematics import default_arm_model
from pollisim.sim.pipeline import train_perception_models


@pytest.fixture(scope="session")
def config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def models(config):
    # shared across tests: training is deterministic in config.training_seed
    return train_perception_models(config)


@pytest.fixture(scope="session")
def arm():
    return default_arm_model()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
