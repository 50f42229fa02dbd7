# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at https://mozilla.org/MPL/2.0/.
import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from resindesign.config import DiffusionConfig, Settings
from resindesign.models import NormStats, TrainingSample
from resindesign.util.homogenization import PhaseMaterials
from resindesign.util.ippt import make_ippt


def blob_raster(shape, seed, fraction=0.5, sigma=3.0) -> np.ndarray:
    """Periodic random blobs covering roughly `fraction` of the cells."""
    noise = np.random.default_rng(seed).standard_normal(shape)
    smooth = gaussian_filter(noise, sigma, mode="wrap")
    return (smooth > np.quantile(smooth, 1 - fraction)).astype(np.uint8)


def square_inclusion(size: int, inset: int) -> np.ndarray:
    """Crystal square centred in an amorphous cell, quarter-turn symmetric."""
    cells = np.zeros((size, size), dtype=np.uint8)
    cells[inset : size - inset, inset : size - inset] = 1
    return cells


@pytest.fixture
def materials():
    return PhaseMaterials()


@pytest.fixture
def small_diffusion():
    return DiffusionConfig(
        timesteps=50,
        beta_start=1e-4,
        beta_end=0.2,
        image_size=16,
        base_channels=8,
        channel_mults=(1, 2),
        groups=4,
        batch_size=4,
        epochs=2,
        patience=2,
        progress=False,
    )


@pytest.fixture
def small_settings(small_diffusion):
    settings = Settings(diffusion=small_diffusion)
    return settings


@pytest.fixture
def toy_samples():
    """Twelve 16x16 samples over three temperatures, with fake stiffness."""
    samples = []
    for k in range(12):
        Tc = (160.0, 180.0, 200.0)[k % 3]
        cells = blob_raster((16, 16), seed=k, sigma=2.0)
        image = np.stack(
            [cells.astype(np.float32), make_ippt(Tc, 16).pixels]
        ).astype(np.float32)
        samples.append(
            TrainingSample(
                sample_id=f"s{k:02d}",
                image=image,
                raw_condition=np.array(
                    [1000.0 + 50 * k, 1100.0 + 40 * k, 300.0 + 10 * k]
                ),
                Tc=Tc,
                seed=k,
            )
        )
    return samples


@pytest.fixture
def norm_stats():
    return NormStats(minimum=(500.0, 500.0, 150.0), maximum=(3000.0,) * 3)
