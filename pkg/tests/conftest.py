import numpy as np
import pytest
import torch
import torch.nn.functional as F

from tlrn.network import NetworkConfig


def smooth_periodic_field(seed: int, size: int = 64, max_mag: float = 2.0,
                          dtype=torch.float64) -> torch.Tensor:
    """Random velocity field, smoothed with a circularly padded box filter so
    it is smooth across the periodic seam, rescaled to the given max norm."""
    g = torch.Generator().manual_seed(seed)
    v = torch.randn(2, size, size, generator=g, dtype=dtype)
    k = torch.ones(1, 1, 9, 9, dtype=dtype) / 81
    for _ in range(4):
        v = F.pad(v[:, None], (4, 4, 4, 4), mode="circular")
        v = F.conv2d(v, k)[:, 0]
    return v / v.abs().max() * max_mag


@pytest.fixture
def tiny_cfg():
    """8x8 single-downsampling config for gradient checks and fast tests."""
    return NetworkConfig(image_size=8, base_channels=4, num_downsamplings=1,
                         latent_channels=6, residual_hidden_channels=6)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
