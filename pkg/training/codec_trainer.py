"""
Latent codec training: plain L2 reconstruction with Adam.

The image pool holds every ground-truth render plus one degraded copy
of each target view, since the codec has to encode coarse inputs too.
The last tenth of the identities is held out for reporting.
"""

import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from common.errors import NumericalAbort, ValidationError
from common.images import to_tensor
from models.codec import CodecCheckpoint, LatentCodec
from synthdata.coarse import DegradationConfig, degrade_bundle

logger = logging.getLogger(__name__)

HOLDOUT_FRACTION = 0.1


def image_pool(bundles: list, degradation: DegradationConfig = None, seed: int = 0) -> np.ndarray:
    degradation = degradation or DegradationConfig()
    images = []
    for index, bundle in enumerate(bundles):
        images.append(bundle.reference)
        images.extend(view.image for view in bundle.targets)
        images.extend(view.image for view in degrade_bundle(bundle, degradation, seed + index))
    return np.stack(images)


def reconstruction_psnr(codec: LatentCodec, images: np.ndarray, batch_size: int = 64) -> float:
    """Mean PSNR (dB) of decode(encode(x)) over a pool of images."""
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            batch = to_tensor(images[start:start + batch_size], next(codec.parameters()).device)
            mse = ((codec(batch) - batch) ** 2).flatten(1).mean(dim=1).clamp_min(1e-10)
            total += float((10.0 * torch.log10(1.0 / mse)).sum())
            count += batch.shape[0]
    return total / max(count, 1)


def heldout_loss(codec: LatentCodec, images: np.ndarray) -> float:
    with torch.no_grad():
        batch = to_tensor(images, next(codec.parameters()).device)
        return float(F.mse_loss(codec(batch), batch))


def train_codec(bundles: list, steps: int, batch_size: int = 16, lr: float = 1e-3, seed: int = 0,
                device: str = "cpu", degradation: DegradationConfig = None,
                progress: bool = False) -> CodecCheckpoint:
    if not bundles:
        raise ValidationError("codec training needs at least one bundle")
    if steps < 0:
        raise ValidationError(f"steps must be >= 0, got {steps}")

    split = max(1, int(math.ceil(len(bundles) * HOLDOUT_FRACTION))) if len(bundles) > 1 else 0
    train_bundles = bundles[:len(bundles) - split] if split else bundles
    holdout_bundles = bundles[len(bundles) - split:] if split else bundles
    train_images = image_pool(train_bundles, degradation, seed)
    holdout_images = image_pool(holdout_bundles, degradation, seed + 7919)

    torch.manual_seed(seed)
    codec = LatentCodec().to(device)
    initial_loss = heldout_loss(codec, holdout_images)
    if steps == 0:
        return CodecCheckpoint(codec=codec, step=0, psnr=reconstruction_psnr(codec, holdout_images),
                               meta={"heldout_loss_initial": initial_loss, "heldout_loss": initial_loss})

    optimizer = torch.optim.Adam(codec.parameters(), lr=lr)
    rng = np.random.default_rng([seed, 1])
    codec.train()
    for step in tqdm(range(steps), desc="codec", disable=not progress):
        picks = rng.integers(len(train_images), size=batch_size)
        batch = to_tensor(train_images[picks], device)
        loss = F.mse_loss(codec(batch), batch)
        if not torch.isfinite(loss):
            raise NumericalAbort(f"codec loss is not finite at step {step}", step=step)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if step % 500 == 0:
            logger.debug(f"[codec] step {step} loss {float(loss):.6f}")

    codec.eval()
    final_loss = heldout_loss(codec, holdout_images)
    psnr = reconstruction_psnr(codec, holdout_images)
    logger.info(f"[codec] {steps} steps: held-out loss {initial_loss:.5f} -> {final_loss:.5f}, PSNR {psnr:.2f} dB")
    return CodecCheckpoint(codec=codec, step=steps, psnr=psnr,
                           meta={"heldout_loss_initial": initial_loss, "heldout_loss": final_loss,
                                 "train_seeds": [b.identity.seed for b in bundles]})
