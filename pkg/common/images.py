"""
Image conventions.

An Image is a float32 array of shape (3, H, W) with values in [0, 1].
Numpy arrays are used for data generation and metrics, torch tensors
inside models; helpers here convert between the two and to/from PNG.
"""

import numpy as np
import torch
from PIL import Image as PILImage

from .errors import ValidationError

SUPPORTED_RESOLUTIONS = (32, 64, 128, 256)


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap values to the 8-bit grid so PNG storage is lossless."""
    return from_uint8(to_uint8(image))


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(array: np.ndarray) -> np.ndarray:
    return array.astype(np.float32) / np.float32(255.0)


def validate_image(image, name: str = "image", channels: int = 3):
    """Check shape (C, H, W) and value range [0, 1]."""
    if image.ndim != 3 or image.shape[0] != channels:
        raise ValidationError(f"{name} must have shape ({channels}, H, W), got {tuple(image.shape)}")
    if isinstance(image, torch.Tensor):
        finite = bool(torch.isfinite(image).all())
        low, high = (float(image.min()), float(image.max())) if finite else (0.0, 0.0)
    else:
        finite = bool(np.isfinite(image).all())
        low, high = (float(image.min()), float(image.max())) if finite else (0.0, 0.0)
    if not finite:
        raise ValidationError(f"{name} contains non-finite values")
    if low < 0.0 or high > 1.0:
        raise ValidationError(f"{name} values must lie in [0, 1], got [{low:.4f}, {high:.4f}]")


def save_png(image: np.ndarray, path: str):
    """Write a (3, H, W) image as an 8-bit RGB PNG."""
    array = to_uint8(image).transpose(1, 2, 0)
    PILImage.fromarray(np.ascontiguousarray(array)).save(path, format='PNG')


def load_png(path: str) -> np.ndarray:
    with PILImage.open(path) as img:
        array = np.asarray(img.convert('RGB'))
    return from_uint8(array.transpose(2, 0, 1).copy())


def to_tensor(images, device=None) -> torch.Tensor:
    """Stack a list of (3, H, W) arrays (or one array) into a float32 batch tensor."""
    if isinstance(images, torch.Tensor):
        batch = images if images.ndim == 4 else images.unsqueeze(0)
        return batch.to(device=device, dtype=torch.float32)
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    batch = torch.from_numpy(np.stack([np.asarray(img, dtype=np.float32) for img in images]))
    return batch.to(device) if device is not None else batch


def to_numpy(batch: torch.Tensor) -> list:
    """Split a (N, 3, H, W) tensor into a list of numpy images."""
    array = batch.detach().cpu().float().numpy()
    return [array[i] for i in range(array.shape[0])]
