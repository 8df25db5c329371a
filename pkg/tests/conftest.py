from pathlib import Path

import numpy as np
import pytest

from analytic_diffusion.core.dataset import ImageDataset, save_raw_tensor
from analytic_diffusion.core.schedule import linear_schedule


def make_dataset(count: int, height: int, width: int, channels: int = 1, seed: int = 0,
                 value_range=(-1.0, 1.0)) -> ImageDataset:
    """Uniform random images in ``value_range``."""
    rng = np.random.default_rng(seed)
    lo, hi = value_range
    images = rng.uniform(lo, hi, size=(count, height * width * channels))
    return ImageDataset(images=images, height=height, width=width, channels=channels,
                        value_range=value_range)


def timestep_for_sigma(sched, sigma: float) -> int:
    return int(np.argmin(np.abs(np.asarray(sched.sigmas) - sigma))) + 1


@pytest.fixture
def schedule():
    """The DDPM linear schedule, T = 1000."""
    return linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture
def small_dataset():
    return make_dataset(12, 4, 4, seed=3)


@pytest.fixture
def dataset_file(tmp_path: Path) -> Path:
    """12 random 4x4 grayscale images in [0, 1] stored as an ADT1 tensor."""
    path = tmp_path / "train.adt"
    save_raw_tensor(make_dataset(12, 4, 4, seed=11, value_range=(0.0, 1.0)), str(path))
    return path
