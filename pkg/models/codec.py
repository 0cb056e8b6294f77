"""
Lightweight convolutional autoencoder mapping images to the latent space.

Two stride-2 stages down and two up: a (3, H, W) image becomes an
(8, H/4, W/4) latent. Encoding is deterministic (no sampling).
"""

import json
import logging
import os
from dataclasses import dataclass, field

import torch
import torch.nn as nn

from common.errors import ConfigurationError, IntegrityError, ValidationError
from common.hashing import architecture_hash, hash_tensors

logger = logging.getLogger(__name__)

DOWNSAMPLE = 4
WEIGHTS_NAME = "codec.pt"
META_NAME = "meta.json"


class LatentCodec(nn.Module):
    def __init__(self, latent_channels: int = 8, widths: tuple = (32, 64)):
        super().__init__()
        self.latent_channels = latent_channels
        self.widths = tuple(widths)
        w0, w1 = self.widths

        self.enc1 = nn.Sequential(
            nn.Conv2d(3, w0, 4, stride=2, padding=1),      # H -> H/2
            nn.SiLU(),
            nn.Conv2d(w0, w0, 3, padding=1),
            nn.SiLU(),
        )
        self.enc2 = nn.Sequential(
            nn.Conv2d(w0, w1, 4, stride=2, padding=1),     # H/2 -> H/4
            nn.SiLU(),
            nn.Conv2d(w1, w1, 3, padding=1),
            nn.SiLU(),
        )
        self.to_latent = nn.Conv2d(w1, latent_channels, 1)

        self.from_latent = nn.Sequential(
            nn.Conv2d(latent_channels, w1, 3, padding=1),
            nn.SiLU(),
        )
        self.dec1 = nn.Sequential(
            nn.ConvTranspose2d(w1, w0, 4, stride=2, padding=1),   # H/4 -> H/2
            nn.SiLU(),
            nn.Conv2d(w0, w0, 3, padding=1),
            nn.SiLU(),
        )
        self.dec2 = nn.Sequential(
            nn.ConvTranspose2d(w0, w0, 4, stride=2, padding=1),   # H/2 -> H
            nn.SiLU(),
            nn.Conv2d(w0, 3, 3, padding=1),
        )

    def config(self) -> dict:
        return {"latent_channels": self.latent_channels, "widths": list(self.widths)}

    def _check_images(self, images: torch.Tensor):
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValidationError(f"expected images of shape (N, 3, H, W), got {tuple(images.shape)}")
        h, w = images.shape[-2:]
        if h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise ValidationError(f"image size {h}x{w} is not divisible by {DOWNSAMPLE}")
        if not torch.isfinite(images).all():
            raise ValidationError("images contain non-finite values")
        if images.min() < 0 or images.max() > 1:
            raise ValidationError("image values must lie in [0, 1]")

    def features(self, images: torch.Tensor) -> list:
        """Feature maps of both encoder stages."""
        self._check_images(images)
        x = images * 2.0 - 1.0
        f1 = self.enc1(x)
        f2 = self.enc2(f1)
        return [f1, f2]

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        return self.to_latent(self.features(images)[-1])

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        if latents.ndim != 4 or latents.shape[1] != self.latent_channels:
            raise ValidationError(
                f"expected latents of shape (N, {self.latent_channels}, h, w), got {tuple(latents.shape)}"
            )
        x = self.from_latent(latents)
        return torch.sigmoid(self.dec2(self.dec1(x)))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(images))

    def feature_distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """
        Per-sample squared distance between encoder feature maps,
        averaged within each stage and then across stages. Shape (N,).
        """
        stages = [
            ((fa - fb) ** 2).flatten(1).mean(dim=1)
            for fa, fb in zip(self.features(a), self.features(b))
        ]
        return torch.stack(stages, dim=0).mean(dim=0)

    def freeze(self) -> "LatentCodec":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    def weights_hash(self) -> str:
        return hash_tensors(self.state_dict())

    def arch_hash(self) -> str:
        return architecture_hash(self, self.config())


@dataclass
class CodecCheckpoint:
    codec: LatentCodec
    step: int = 0
    psnr: float = None
    meta: dict = field(default_factory=dict)


def save_codec(checkpoint: CodecCheckpoint, directory: str) -> str:
    """Write codec.pt and meta.json. Returns the directory."""
    os.makedirs(directory, exist_ok=True)
    codec = checkpoint.codec
    torch.save(codec.state_dict(), os.path.join(directory, WEIGHTS_NAME))
    meta = dict(checkpoint.meta)
    meta.update({
        "config": codec.config(),
        "architecture_hash": codec.arch_hash(),
        "weights_hash": codec.weights_hash(),
        "step": checkpoint.step,
        "psnr": checkpoint.psnr,
    })
    with open(os.path.join(directory, META_NAME), 'w') as f:
        json.dump(meta, f, indent=2)
        f.flush()
        os.fsync(f.fileno())
    logger.info(f"[codec] saved checkpoint at step {checkpoint.step} to {directory}")
    return directory


def load_codec(directory: str, device: str = "cpu") -> CodecCheckpoint:
    """Load a codec checkpoint, verifying architecture and weight hashes."""
    weights_path = os.path.join(directory or "", WEIGHTS_NAME)
    meta_path = os.path.join(directory or "", META_NAME)
    if not directory or not os.path.exists(weights_path) or not os.path.exists(meta_path):
        raise ConfigurationError(f"no codec checkpoint at {directory}; train the codec stage first")

    with open(meta_path, 'r') as f:
        meta = json.load(f)
    codec = LatentCodec(**meta["config"])
    if codec.arch_hash() != meta.get("architecture_hash"):
        raise IntegrityError(f"codec architecture in {directory} does not match meta.json")

    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    codec.load_state_dict(state)
    if codec.weights_hash() != meta.get("weights_hash"):
        raise IntegrityError(f"codec weights in {weights_path} do not match meta.json")

    codec.to(device)
    return CodecCheckpoint(codec=codec, step=meta.get("step", 0), psnr=meta.get("psnr"), meta=meta)
