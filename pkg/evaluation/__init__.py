# evaluation/__init__.py
from .metrics import psnr, ssim, l2_error, lpips_proxy, id_consistency, fid_proxy, frechet_distance
from .embedder import IdentityEmbedder, train_embedder, save_embedder, load_embedder, get_embedder
from .report import EvalReport
from .ablations import evaluate, ablate_noise, ablate_rotation, timing, ROTATION_ANGLES

__all__ = [
    'psnr', 'ssim', 'l2_error', 'lpips_proxy', 'id_consistency', 'fid_proxy', 'frechet_distance',
    'IdentityEmbedder', 'train_embedder', 'save_embedder', 'load_embedder', 'get_embedder',
    'EvalReport',
    'evaluate', 'ablate_noise', 'ablate_rotation', 'timing', 'ROTATION_ANGLES',
]
