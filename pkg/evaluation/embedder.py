"""
Synthetic identity embedder.

A small CNN trained to classify identities from renders at arbitrary yaw
(clean and degraded). Its penultimate layer, L2-normalized, is the
embedding used for identity consistency and the Fréchet distance proxy.
The classifier head is a cosine classifier, so identities separate by angle.
"""

import json
import logging
import os
import threading

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from common.errors import ConfigurationError, IntegrityError, ValidationError
from common.hashing import hash_tensors
from common.images import to_tensor
from synthdata.coarse import DegradationConfig, degrade
from synthdata.identity import CameraPose, sample_identity
from synthdata.render import render_view

logger = logging.getLogger(__name__)

WEIGHTS_NAME = "embedder.pt"
META_NAME = "meta.json"
LOGIT_SCALE = 16.0

# Lazy, process-wide cache of loaded embedders keyed by directory
_embedders = {}
_embedders_lock = threading.Lock()


class IdentityEmbedder(nn.Module):
    def __init__(self, classes: int, embed_dim: int = 64, widths: tuple = (32, 64, 128)):
        super().__init__()
        w0, w1, w2 = widths
        self.classes = classes
        self.embed_dim = embed_dim
        self.widths = tuple(widths)
        self.backbone = nn.Sequential(
            nn.Conv2d(3, w0, 3, stride=2, padding=1), nn.GroupNorm(8, w0), nn.SiLU(),
            nn.Conv2d(w0, w1, 3, stride=2, padding=1), nn.GroupNorm(8, w1), nn.SiLU(),
            nn.Conv2d(w1, w2, 3, stride=2, padding=1), nn.GroupNorm(8, w2), nn.SiLU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )
        self.project = nn.Linear(w2, embed_dim)
        self.class_weights = nn.Parameter(torch.randn(classes, embed_dim) * 0.01)
        self.trained = False
        self.meta = {}

    def config(self) -> dict:
        return {"classes": self.classes, "embed_dim": self.embed_dim, "widths": list(self.widths)}

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Unit-norm embeddings (N, D)."""
        return F.normalize(self.project(self.backbone(images * 2.0 - 1.0)), dim=1)

    def logits(self, images: torch.Tensor) -> torch.Tensor:
        return LOGIT_SCALE * self(images) @ F.normalize(self.class_weights, dim=1).T

    def embed(self, images: list, batch_size: int = 64) -> np.ndarray:
        device = next(self.parameters()).device
        chunks = []
        self.eval()
        with torch.no_grad():
            for start in range(0, len(images), batch_size):
                chunks.append(self(to_tensor(list(images[start:start + batch_size]), device)).cpu().double().numpy())
        return np.concatenate(chunks) if chunks else np.zeros((0, self.embed_dim))

    def features(self, images: list) -> np.ndarray:
        return self.embed(images)


def _random_pose(rng) -> CameraPose:
    return CameraPose(yaw=float(rng.uniform(-90.0, 90.0)), pitch=float(rng.uniform(-10.0, 10.0)))


def render_pool(seeds: list, resolution: int, per_identity: int, seed: int, regime: str = "pretrain",
                degradation: DegradationConfig = None) -> tuple:
    """Renders at random yaw in [-90, 90]; every other one degraded. Returns (images, labels)."""
    degradation = degradation or DegradationConfig()
    rng = np.random.default_rng([seed, 3])
    images, labels = [], []
    for label, identity_seed in enumerate(seeds):
        identity = sample_identity(identity_seed, regime)
        for k in range(per_identity):
            pose = _random_pose(rng)
            image = render_view(identity, pose, resolution)
            if k % 2:
                image = degrade(image, pose, degradation, int(rng.integers(2 ** 31))).image
            images.append(image)
            labels.append(label)
    return np.stack(images), np.array(labels)


def train_embedder(seeds: list, resolution: int = 64, steps: int = 3000, seed: int = 0,
                   batch_size: int = 32, lr: float = 1e-3, views_per_identity: int = 16,
                   regime: str = "pretrain", device: str = "cpu", progress: bool = False) -> IdentityEmbedder:
    """Train on `views_per_identity` renders per identity, report accuracy on fresh poses."""
    if len(seeds) < 2:
        raise ValidationError("the identity embedder needs at least two identities")
    if steps < 1:
        raise ValidationError(f"embedder steps must be >= 1, got {steps}")

    train_images, train_labels = render_pool(seeds, resolution, views_per_identity, seed, regime)
    heldout_images, heldout_labels = render_pool(seeds, resolution, 2, seed + 1, regime)

    torch.manual_seed(seed)
    embedder = IdentityEmbedder(classes=len(seeds)).to(device)
    optimizer = torch.optim.Adam(embedder.parameters(), lr=lr)
    rng = np.random.default_rng([seed, 4])
    embedder.train()
    for step in tqdm(range(steps), desc="embedder", disable=not progress):
        picks = rng.integers(len(train_images), size=batch_size)
        images = to_tensor(train_images[picks], device)
        labels = torch.from_numpy(train_labels[picks]).long().to(device)
        loss = F.cross_entropy(embedder.logits(images), labels)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    embedder.eval()
    with torch.no_grad():
        predicted = embedder.logits(to_tensor(heldout_images, device)).argmax(dim=1).cpu().numpy()
    accuracy = float(np.mean(predicted == heldout_labels))
    embedder.trained = True
    embedder.meta = {
        "heldout_accuracy": accuracy,
        "train_seeds": [int(s) for s in seeds],
        "resolution": resolution,
        "regime": regime,
        "steps": steps,
    }
    logger.info(f"[embedder] {len(seeds)} identities, held-out pose accuracy {accuracy:.3f}")
    return embedder


def save_embedder(embedder: IdentityEmbedder, directory: str) -> str:
    if not embedder.trained:
        raise ConfigurationError("refusing to save an untrained embedder")
    os.makedirs(directory, exist_ok=True)
    state = {k: v.detach().cpu() for k, v in embedder.state_dict().items()}
    torch.save(state, os.path.join(directory, WEIGHTS_NAME))
    meta = dict(embedder.meta)
    meta.update({"config": embedder.config(), "weights_hash": hash_tensors(state)})
    with open(os.path.join(directory, META_NAME), 'w') as f:
        json.dump(meta, f, indent=2)
        f.flush()
        os.fsync(f.fileno())
    return directory


def load_embedder(directory: str, device: str = "cpu") -> IdentityEmbedder:
    weights_path = os.path.join(directory or "", WEIGHTS_NAME)
    meta_path = os.path.join(directory or "", META_NAME)
    if not directory or not os.path.exists(weights_path) or not os.path.exists(meta_path):
        raise ConfigurationError(f"no trained identity embedder at {directory}; run `train --stage embedder`")
    with open(meta_path, 'r') as f:
        meta = json.load(f)
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    if hash_tensors(state) != meta.get("weights_hash"):
        raise IntegrityError(f"embedder weights in {weights_path} do not match meta.json")

    config = meta.pop("config")
    embedder = IdentityEmbedder(classes=config["classes"], embed_dim=config["embed_dim"],
                                widths=tuple(config["widths"]))
    embedder.load_state_dict(state)
    embedder.meta = meta
    embedder.trained = True
    return embedder.to(device).eval()


def get_embedder(directory: str, device: str = "cpu") -> IdentityEmbedder:
    """Load once per process and directory."""
    if not directory:
        raise ConfigurationError("no identity embedder directory given")
    key = (os.path.abspath(directory), device)
    if key not in _embedders:
        with _embedders_lock:
            if key not in _embedders:
                _embedders[key] = load_embedder(directory, device)
    return _embedders[key]
