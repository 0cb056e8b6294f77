"""
Image quality metrics.

PSNR, SSIM and L2 are the standard definitions. LPIPS, identity
consistency and FID are replaced by proxies built on in-repo networks:
codec-encoder features for the perceptual distance and the synthetic
identity embedder for ID and Fréchet distance. Reports label them as
proxies; they are not comparable to published numbers.
"""

import numpy as np
import torch
from scipy import linalg
from skimage.metrics import structural_similarity

from common.errors import ConfigurationError, ValidationError
from common.images import to_tensor, validate_image

PSNR_CAP = 99.0
FID_MIN_IMAGES = 32


def _check_pair(a, b):
    validate_image(a, "a")
    validate_image(b, "b")
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def l2_error(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(diff ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) in dB, capped at 99 dB (exact matches included)."""
    mse = l2_error(a, b)
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Gaussian-window SSIM (sigma 1.5, 11x11), averaged over channels."""
    _check_pair(a, b)
    value = structural_similarity(
        np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64),
        data_range=1.0, channel_axis=0,
        gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
    )
    return float(np.clip(value, -1.0, 1.0))


def lpips_proxy_batch(a: list, b: list, codec) -> np.ndarray:
    """Per-pair codec feature distance for two equally long image lists."""
    if codec is None:
        raise ConfigurationError("lpips_proxy needs a trained codec")
    if len(a) != len(b):
        raise ValidationError(f"image lists differ in length: {len(a)} vs {len(b)}")
    for x, y in zip(a, b):
        _check_pair(x, y)
    device = next(codec.parameters()).device
    with torch.no_grad():
        # symmetric by construction: squared differences of the same feature maps
        distance = codec.feature_distance(to_tensor(a, device), to_tensor(b, device))
    return distance.cpu().double().numpy()


def lpips_proxy(a: np.ndarray, b: np.ndarray, codec) -> float:
    return float(lpips_proxy_batch([a], [b], codec)[0])


def id_consistency(a: np.ndarray, b: np.ndarray, embedder) -> float:
    """Cosine similarity of identity embeddings, in [-1, 1]."""
    if embedder is None or not getattr(embedder, "trained", False):
        raise ConfigurationError("id_consistency needs a trained identity embedder")
    _check_pair(a, b)
    ea, eb = embedder.embed([a, b])
    return float(np.clip(np.dot(ea, eb), -1.0, 1.0))


def id_consistency_batch(a: list, b: list, embedder) -> np.ndarray:
    if embedder is None or not getattr(embedder, "trained", False):
        raise ConfigurationError("id_consistency needs a trained identity embedder")
    if len(a) != len(b):
        raise ValidationError(f"image lists differ in length: {len(a)} vs {len(b)}")
    ea = embedder.embed(a)
    eb = embedder.embed(b)
    return np.clip(np.sum(ea * eb, axis=1), -1.0, 1.0)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh((matrix + matrix.T) / 2.0)
    values = np.sqrt(np.clip(values, 0.0, None))
    return (vectors * values) @ vectors.T


def frechet_distance(features_a: np.ndarray, features_b: np.ndarray) -> float:
    r"""
    :math:`|\mu_a - \mu_b|^2 + tr(\Sigma_a + \Sigma_b - 2 (\Sigma_a \Sigma_b)^{1/2})`

    The cross term uses tr((A^{1/2} B A^{1/2})^{1/2}), which equals
    tr((AB)^{1/2}) and stays symmetric; negative eigenvalues from
    rank-deficient covariances are clamped to zero.
    """
    fa = np.asarray(features_a, dtype=np.float64)
    fb = np.asarray(features_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise ValidationError(f"feature sets must be (N, D) with equal D, got {fa.shape} and {fb.shape}")

    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.cov(fa, rowvar=False)
    cov_b = np.cov(fb, rowvar=False)

    root_a = _psd_sqrt(cov_a)
    cross = root_a @ cov_b @ root_a
    cross_values = linalg.eigvalsh((cross + cross.T) / 2.0)
    tr_cross = float(np.sum(np.sqrt(np.clip(cross_values, 0.0, None))))

    distance = float(np.sum((mu_a - mu_b) ** 2)) + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * tr_cross
    return max(distance, 0.0)


def fid_proxy(set_a: list, set_b: list, embedder) -> float:
    """Fréchet distance between identity-embedder features of two image sets."""
    if len(set_a) < FID_MIN_IMAGES or len(set_b) < FID_MIN_IMAGES:
        raise ValidationError(
            f"fid_proxy needs at least {FID_MIN_IMAGES} images per set, got {len(set_a)} and {len(set_b)}"
        )
    if embedder is None or not getattr(embedder, "trained", False):
        raise ConfigurationError("fid_proxy needs a trained identity embedder")
    return frechet_distance(embedder.features(set_a), embedder.features(set_b))
