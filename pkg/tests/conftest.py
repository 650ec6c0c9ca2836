import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mmst import data as data_mod
from mmst.config import Config, DataConfig, ModelConfig, TrainConfig
from mmst.raster import RasterConfig


def tiny_config(**model_overrides) -> Config:
    """Small-everything config for fast model construction in tests."""
    model = dict(
        history_sec=1.0, horizon_sec=2.0, conv_channels=(2, 3),
        lower_caps=2, lower_caps_dim=3, higher_caps=2, higher_caps_dim=4,
        final_caps_dim=6, global_caps=2, global_caps_dim=4, state_embed=4,
        lstm_hidden=6, past_embed=6, future_embed=6, recog_hidden=8,
        latent_dim=4, gen_hidden=(8, 8, 6), dtype="float64")
    model.update(model_overrides)
    return Config(model=ModelConfig(**model),
                  raster=RasterConfig(global_px=8, local_px=8),
                  data=DataConfig(n_scenes=3),
                  train=TrainConfig(epochs=1, batch_size=4))


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A real generated dataset, shared across tests that only read it."""
    out = tmp_path_factory.mktemp("dataset")
    cfg = Config(data=DataConfig(n_scenes=5))
    summary = data_mod.build_dataset(seed=11, cfg=cfg, out_dir=out, n_scenes=5)
    return {"dir": out, "config": cfg, "summary": summary}


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
