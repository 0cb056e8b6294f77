r"""
Generator and discriminator objectives.

Hinge GAN:
:math:`L_D = \text{mean}(\max(0, 1 - D(x_r))) + \text{mean}(\max(0, 1 + D(x_f)))`
:math:`L_G = -\text{mean}(D(x_f))`

The perceptual term compares frozen codec-encoder feature maps.
"""

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from common.errors import ValidationError
from .config import LossWeights


@dataclass
class LossReport:
    recon_l2: float = 0.0
    perceptual: float = 0.0
    gan_g: float = 0.0
    gan_d: float = 0.0
    total_g: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def hinge_real(logits):
    return F.relu(1 - logits).mean()


def hinge_fake(logits):
    return F.relu(1 + logits).mean()


def hinge_generated(logits):
    return (-logits).mean()


def _check_pair(refined, ground_truth):
    if refined.shape != ground_truth.shape:
        raise ValidationError(f"refined {tuple(refined.shape)} and ground truth {tuple(ground_truth.shape)} differ")
    if refined.ndim != 4:
        raise ValidationError(f"expected (N, 3, H, W) images, got {tuple(refined.shape)}")


def generator_loss(refined, ground_truth, disc, codec, weights: LossWeights = None):
    """
    Weighted generator objective over novel-view images (slots 1..V only).
    Returns (total tensor, LossReport).
    """
    weights = weights or LossWeights()
    _check_pair(refined, ground_truth)

    recon = F.mse_loss(refined, ground_truth)
    perceptual = codec.feature_distance(refined, ground_truth).mean()
    gan_g = hinge_generated(disc(refined)) if weights.gan > 0 else refined.new_zeros(())

    total = weights.recon * recon + weights.perceptual * perceptual + weights.gan * gan_g
    report = LossReport(
        recon_l2=float(recon.detach()),
        perceptual=float(perceptual.detach()),
        gan_g=float(gan_g.detach()),
        total_g=float(total.detach()),
    )
    return total, report


def discriminator_loss(refined, ground_truth, disc):
    """Hinge loss; the fake branch is detached from the generator."""
    _check_pair(refined, ground_truth)
    return hinge_real(disc(ground_truth)) + hinge_fake(disc(refined.detach()))
