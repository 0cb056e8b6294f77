"""
Variable-noise latent perturbation.

Novel-view latents are blended with Gaussian noise, z <- (1 - r) z + r n;
the reference slot is never touched.
"""

from dataclasses import dataclass

import numpy as np
import torch

from common.errors import ValidationError
from .layout import ViewLatentBatch

TRAIN_NOISE_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
INFERENCE_NOISE_LEVEL = 0.1
INFERENCE_SEED = 20240400
MAX_NOISE_LEVEL = 0.5


@dataclass(frozen=True)
class NoiseLevel:
    r: float

    def __post_init__(self):
        if not 0.0 <= self.r <= MAX_NOISE_LEVEL:
            raise ValidationError(f"noise level r must lie in [0, {MAX_NOISE_LEVEL}], got {self.r}")

    @classmethod
    def of(cls, value) -> "NoiseLevel":
        return value if isinstance(value, NoiseLevel) else cls(float(value))


def sample_train_noise_level(rng: np.random.Generator, levels: tuple = TRAIN_NOISE_LEVELS) -> NoiseLevel:
    """Uniform draw from the training level set."""
    return NoiseLevel(float(levels[int(rng.integers(len(levels)))]))


def sample_noise(shape, seed: int, dtype=torch.float32) -> torch.Tensor:
    """Standard Gaussian noise from a CPU generator, identical on every device."""
    generator = torch.Generator().manual_seed(int(seed))
    return torch.randn(shape, generator=generator, dtype=dtype)


def add_noise(batch: ViewLatentBatch, r, rng_seed: int = None, noise: torch.Tensor = None) -> ViewLatentBatch:
    """
    Blend slots 1..V with noise; slot 0 is returned bit-identical.
    `noise` (shaped like the novel slots) overrides the seeded draw.
    """
    level = NoiseLevel.of(r)
    data = batch.data
    if level.r == 0.0:
        return ViewLatentBatch(data.clone())

    novel = data[:, 1:]
    if noise is None:
        if rng_seed is None:
            raise ValidationError("add_noise needs either rng_seed or an explicit noise tensor")
        noise = sample_noise(novel.shape, rng_seed, dtype=data.dtype)
    if tuple(noise.shape) != tuple(novel.shape):
        raise ValidationError(f"noise shape {tuple(noise.shape)} does not match novel slots {tuple(novel.shape)}")
    noise = noise.to(device=data.device, dtype=data.dtype)

    blended = (1.0 - level.r) * novel + level.r * noise
    return ViewLatentBatch(torch.cat([data[:, :1], blended], dim=1))
