import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the shared oracles module


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    from stam.model import ModelConfig

    return ModelConfig(
        variant="stam",
        input_hw=(8, 8),
        backbone_channels=(2, 3, 4),
        heads=2,
        num_classes=3,
        seed=7,
    )


@pytest.fixture
def tiny_frames(rng):
    return [rng.uniform(0.1, 0.9, size=(8, 8)) for _ in range(2)]
