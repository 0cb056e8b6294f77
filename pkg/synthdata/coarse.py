"""
Coarse novel views: analytic degradation of ground-truth renders.

Severity grows linearly with |yaw|, reproducing the blur in hair and
side regions that feed-forward avatar renders show at large head turns.
"""

from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

from common.errors import ValidationError
from common.images import validate_image
from .identity import CameraPose


@dataclass(frozen=True)
class DegradationConfig:
    base_blur_sigma: float = 1.0     # pixels
    yaw_blur_gain: float = 0.03      # pixels per degree
    noise_sigma: float = 0.02        # intensity units
    desaturation: float = 0.15       # fraction

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValidationError(f"degradation.{f.name} must be >= 0, got {getattr(self, f.name)}")
        if self.desaturation > 1:
            raise ValidationError(f"degradation.desaturation must be <= 1, got {self.desaturation}")

    def blur_sigma(self, yaw: float) -> float:
        return self.base_blur_sigma + self.yaw_blur_gain * abs(yaw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "DegradationConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown degradation keys: {unknown}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(eq=False)
class CoarseView:
    image: np.ndarray
    pose: CameraPose
    source_identity_seed: int = -1


def degrade(ground_truth: np.ndarray, pose: CameraPose, config: DegradationConfig,
            rng_seed: int, source_identity_seed: int = -1) -> CoarseView:
    """
    Blur (yaw-dependent), add seeded noise, desaturate, clamp.

    Desaturation pulls each pixel toward its own gray value (the mean of its
    three channels), not toward the mean of the whole image. The output is
    not quantized.
    """
    validate_image(ground_truth, "ground_truth")
    pose.validate()

    image = ground_truth.astype(np.float32, copy=True)

    sigma = config.blur_sigma(pose.yaw)
    if sigma > 0:
        image = ndimage.gaussian_filter(image, sigma=(0.0, sigma, sigma), mode='reflect')

    if config.noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        image = image + rng.normal(0.0, config.noise_sigma, size=image.shape).astype(np.float32)

    if config.desaturation > 0:
        gray = image.mean(axis=0, keepdims=True)
        image = (1.0 - config.desaturation) * image + config.desaturation * gray

    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return CoarseView(image=image, pose=pose, source_identity_seed=source_identity_seed)


def degrade_bundle(bundle, config: DegradationConfig, rng_seed: int) -> list:
    """Degrade every target of a bundle; view i uses seed rng_seed * 1009 + i."""
    return [
        degrade(target.image, target.pose, config, rng_seed * 1009 + index, bundle.identity.seed)
        for index, target in enumerate(bundle.targets)
    ]


def laplacian_energy(image: np.ndarray) -> float:
    """Sum of squared Laplacian over all channels (high-frequency energy)."""
    return float(sum(np.sum(ndimage.laplace(channel.astype(np.float64)) ** 2) for channel in image))
