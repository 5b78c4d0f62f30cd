import pytest
from unittest.mock import patch
import os
import numpy as np

from models import BlockConfig, ChannelPlan, RunConfig
from services.ssm import SSMParams
from utils.rng import SeededRng

@pytest.fixture
def rng():
    """Root random stream for a test."""
    return SeededRng(seed=1234)

@pytest.fixture
def small_block():
    """4x4 token grid, 2x2 local windows, no dropout."""
    return BlockConfig(target_grid=(4, 4), channels=4, state_dim=2, local_window=(2, 2),
                       n_single=1, dropout=0.0)

@pytest.fixture
def small_run():
    """64x64 images: S3 8x8, S4 4x4, S5 2x2, pooled to a 2x2 token grid."""
    return RunConfig(
        image_size=(64, 64),
        channels=ChannelPlan(c3=4, c4=6, c5=8),
        block=BlockConfig(target_grid=(2, 2), channels=8, state_dim=2, local_window=(1, 1), n_single=1),
        seed=7,
    )

@pytest.fixture
def ssm_params():
    """Hand-picked parameters for C=2 channels and N=3 states."""
    return SSMParams(
        A=np.array([-0.5, -1.0, -2.0]),
        B_proj=np.array([[0.3, -0.2], [0.1, 0.4], [-0.5, 0.2]]),
        C_proj=np.array([[0.2, 0.1], [-0.3, 0.5], [0.4, -0.1]]),
        dt_proj=np.array([0.25, -0.5]),
        dt_bias=-0.7,
        D=np.array([1.0, 0.5]),
        B_fixed=np.array([0.6, -0.4, 0.2]),
        C_fixed=np.array([1.0, 0.5, -0.25]),
    )

@pytest.fixture
def small_config_file(tmp_path):
    """The small run configuration written as a JSON config file."""
    path = tmp_path / "small.json"
    path.write_text(
        '{"image_size": [64, 64], "channels": {"c3": 4, "c4": 6, "c5": 8},'
        ' "block": {"target_grid": [2, 2], "channels": 8, "state_dim": 2,'
        ' "local_window": [1, 1], "n_single": 1}, "seed": 7}',
        encoding="utf-8",
    )
    return path

@pytest.fixture
def output_dir(tmp_path):
    """Point COMO_OUTPUT_DIR at a temporary directory."""
    target = tmp_path / "reports"
    with patch.dict(os.environ, {"COMO_OUTPUT_DIR": str(target)}):
        yield target
