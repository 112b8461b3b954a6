import numpy as np
import pytest

from kanpaint.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config(**overrides) -> RunConfig:
    """A configuration small enough for sub-second training runs."""
    cfg = RunConfig()
    cfg.model.arch = "CK"
    cfg.model.base_channels = 4
    cfg.model.embed_dim = 32
    cfg.model.encoder_base_channels = 4
    cfg.schedule.timesteps = 10
    cfg.data.phantom_count = 3
    cfg.data.height = 16
    cfg.data.width = 16
    cfg.train.steps = 6
    for key, value in overrides.items():
        section, name = key.split(".", 1) if "." in key else (None, key)
        if section is None:
            setattr(cfg, name, value)
        else:
            setattr(getattr(cfg, section), name, value)
    return cfg
