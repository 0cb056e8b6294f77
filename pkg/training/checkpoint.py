"""
Stage checkpoints.

A checkpoint directory holds the refiner (base + adapters), the
discriminator, both optimizer states and manifest.json. The manifest is
written last via an atomic rename, so a directory without one is an
interrupted save and is never loaded.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import torch

from common.errors import ConfigurationError, IntegrityError
from common.hashing import sha256_file
from models.refiner import save_refiner

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
REFINER_DIR = "refiner"
DISCRIMINATOR_NAME = "discriminator.pt"
OPTIMIZER_NAME = "optimizers.pt"


@dataclass
class CheckpointManifest:
    stage: str
    step: int
    config: dict
    config_hash: str
    codec_dir: str
    codec_hash: str
    base_hash: str
    train_seeds: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    parent: str = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CheckpointManifest":
        return cls(**data)


def checkpoint_name(step: int) -> str:
    return f"step_{step:07d}"


def _hash_tree(directory: str) -> dict:
    files = {}
    for root, _, names in os.walk(directory):
        for name in sorted(names):
            path = os.path.join(root, name)
            rel = os.path.relpath(path, directory)
            if rel == MANIFEST_NAME or rel.endswith(".tmp"):
                continue
            files[rel] = sha256_file(path)
    return files


def save_checkpoint(directory: str, manifest: CheckpointManifest, refiner, discriminator=None,
                    optimizers: dict = None) -> CheckpointManifest:
    """Write weights, then hash everything, then the manifest."""
    os.makedirs(directory, exist_ok=True)
    save_refiner(refiner, os.path.join(directory, REFINER_DIR))
    if discriminator is not None:
        torch.save(discriminator.state_dict(), os.path.join(directory, DISCRIMINATOR_NAME))
    if optimizers:
        torch.save({name: opt.state_dict() for name, opt in optimizers.items()},
                   os.path.join(directory, OPTIMIZER_NAME))

    manifest.files = _hash_tree(directory)
    tmp_path = os.path.join(directory, MANIFEST_NAME + ".tmp")
    with open(tmp_path, 'w') as f:
        json.dump(manifest.to_dict(), f, indent=2)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp_path, os.path.join(directory, MANIFEST_NAME))
    logger.info(f"[checkpoint] {manifest.stage} step {manifest.step} -> {directory}")
    return manifest


def load_manifest(directory: str, verify: bool = True) -> CheckpointManifest:
    """Read manifest.json and (by default) check every recorded file hash."""
    path = os.path.join(directory or "", MANIFEST_NAME)
    if not directory or not os.path.exists(path):
        raise ConfigurationError(f"no checkpoint manifest at {directory}")
    try:
        with open(path, 'r') as f:
            manifest = CheckpointManifest.from_dict(json.load(f))
    except (json.JSONDecodeError, TypeError) as e:
        raise IntegrityError(f"unreadable checkpoint manifest {path}: {e}")

    if verify:
        for rel, expected in manifest.files.items():
            file_path = os.path.join(directory, rel)
            if not os.path.exists(file_path):
                raise IntegrityError(f"checkpoint file {rel} is missing from {directory}")
            if sha256_file(file_path) != expected:
                raise IntegrityError(f"checkpoint file {rel} in {directory} does not match its hash")
    return manifest


def load_state(directory: str, name: str):
    path = os.path.join(directory, name)
    if not os.path.exists(path):
        return None
    return torch.load(path, map_location="cpu", weights_only=True)


def latest_checkpoint(directory: str) -> str:
    """Newest complete checkpoint under directory/checkpoints, or None."""
    root = os.path.join(directory, "checkpoints")
    if not os.path.isdir(root):
        return None
    complete = [
        name for name in sorted(os.listdir(root))
        if os.path.exists(os.path.join(root, name, MANIFEST_NAME))
    ]
    return os.path.join(root, complete[-1]) if complete else None
