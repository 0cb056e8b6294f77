"""
Pytest fixtures for the portrait refiner tests.
"""

import os
import subprocess
import sys

import pytest
import torch

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from models.codec import CodecCheckpoint, LatentCodec, save_codec  # noqa: E402
from models.refiner import RefinerConfig, RefinerModel  # noqa: E402
from synthdata.dataset import generate_bundles  # noqa: E402
from synthdata.identity import split_seeds  # noqa: E402
from training.config import TrainConfig  # noqa: E402

TEST_RESOLUTION = 32


@pytest.fixture(scope="session")
def train_bundles():
    """Six pretrain-regime identities, two views each, 32x32."""
    seeds, _ = split_seeds(6, 0)
    return generate_bundles(seeds, views=2, resolution=TEST_RESOLUTION)


@pytest.fixture(scope="session")
def eval_bundles():
    """Three held-out identities (disjoint from train_bundles)."""
    _, seeds = split_seeds(6, 3)
    return generate_bundles(seeds, views=2, resolution=TEST_RESOLUTION, pose_seed=1)


@pytest.fixture(scope="function")
def codec():
    torch.manual_seed(0)
    return LatentCodec().freeze()


@pytest.fixture(scope="function")
def refiner():
    """Default-architecture refiner (V=2) with fresh adapters."""
    torch.manual_seed(0)
    return RefinerModel(RefinerConfig(views=2)).attach_lora().eval()


@pytest.fixture(scope="function")
def codec_dir(tmp_path, codec):
    return save_codec(CodecCheckpoint(codec=codec), str(tmp_path / "codec"))


@pytest.fixture(scope="function")
def tiny_config():
    """A few steps of everything, checkpoints every two steps."""
    return TrainConfig(
        steps=4, batch_size=2, views=2, resolution=TEST_RESOLUTION,
        base_steps=2, eval_every=0, eval_limit=2, checkpoint_every=2, prefetch=2,
    )


def run_cli(*args, cwd=None, timeout=600):
    """Run run_portrait.py in a subprocess; returns the CompletedProcess."""
    return subprocess.run(
        [sys.executable, os.path.join(ROOT, "run_portrait.py"), *[str(a) for a in args]],
        capture_output=True,
        text=True,
        cwd=cwd or ROOT,
        timeout=timeout,
    )
