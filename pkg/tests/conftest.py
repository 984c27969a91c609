import numpy as np
import pytest
import torch

from predetect.config import ExperimentConfig, ModelConfig
from predetect.scenes import SceneConfig


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture
def small_scene() -> SceneConfig:
    return SceneConfig(cells_x=16, cells_y=16, object_count_range=(1, 3), noise_sigma=0.0)


@pytest.fixture
def small_config(small_scene) -> ExperimentConfig:
    return ExperimentConfig(
        scene=small_scene,
        model=ModelConfig(feature_channels=16, num_queries=16, n_heads=2, n_points=2,
                          head_hidden=16),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
