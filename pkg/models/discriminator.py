"""
PatchGAN discriminator.

Input (N, 3, H, W) -> output (N, 1, H/8, W/8). Three stride-2 3x3 stages
give each logit a receptive field of 15x15 pixels. No normalization
layers, so every sample and every patch is scored independently.
"""

import torch
import torch.nn as nn

from common.errors import ValidationError

STRIDE = 8


class PatchDiscriminator(nn.Module):
    """
    Args:
        image_channels (int): Number of channels in the input image.
        widths (tuple): Filters of the three stride-2 stages.
    """

    def __init__(self, image_channels: int = 3, widths: tuple = (32, 64, 128)):
        super().__init__()
        w0, w1, w2 = widths
        self.model = nn.Sequential(
            nn.Conv2d(image_channels, w0, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w0, w1, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w1, w2, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w2, 1, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValidationError(f"discriminator expects (N, 3, H, W), got {tuple(x.shape)}")
        if x.shape[-1] % STRIDE or x.shape[-2] % STRIDE:
            raise ValidationError(f"image size {x.shape[-2]}x{x.shape[-1]} is not divisible by {STRIDE}")
        return self.model(x * 2.0 - 1.0)


def receptive_field(row: int, col: int) -> tuple:
    """Pixel box (top, left, bottom, right), inclusive, seen by logit (row, col)."""
    # Three k=3, s=2, p=1 layers: jump 8, extent 15, offset -7 relative to 8*index.
    top, left = STRIDE * row - 7, STRIDE * col - 7
    return top, left, top + 14, left + 14


def disc_forward(disc: PatchDiscriminator, images: torch.Tensor) -> torch.Tensor:
    """Patch logits for a batch of images in [0, 1]."""
    if images.min() < 0 or images.max() > 1:
        raise ValidationError("discriminator input must lie in [0, 1]")
    return disc(images)
