"""
On-disk datasets: manifest.json plus one PNG per view.

Images are written first and the manifest last (atomically), so a
manifest on disk always describes a complete set of files. Reading
verifies every record and reports the first bad one.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from common.errors import IntegrityError, ValidationError
from common.hashing import hash_config, sha256_file
from common.images import load_png, save_png
from .identity import CameraPose, sample_identity, sample_training_poses
from .scene import SceneBundle, View, make_bundle

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "1.0"
MANIFEST_NAME = "manifest.json"


@dataclass
class Manifest:
    resolution: int
    regime: str = "pretrain"
    split: str = "train"
    generator_version: str = GENERATOR_VERSION
    records: list = field(default_factory=list)

    @property
    def seeds(self) -> list:
        return [r["seed"] for r in self.records]

    def to_dict(self) -> dict:
        return {
            "generator_version": self.generator_version,
            "resolution": self.resolution,
            "regime": self.regime,
            "split": self.split,
            "records": self.records,
        }

    def content_hash(self) -> str:
        return hash_config(self.to_dict())


def image_name(seed: int, view_index: int) -> str:
    return f"{seed}_{view_index}.png"


def generate_bundles(seeds: list, views: int, resolution: int, regime: str = "pretrain",
                     pose_seed: int = 0, workers: int = 1) -> list:
    """
    Build one bundle per seed with training poses drawn from (pose_seed, seed).
    Bundles are independent, so they may be built on several threads.
    """
    def build(seed):
        rng = np.random.default_rng([pose_seed, seed])
        poses = sample_training_poses(rng, views)
        return make_bundle(sample_identity(seed, regime), poses, resolution)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, seeds))
    return [build(seed) for seed in seeds]


def write_dataset(bundles: list, directory: str, split: str = "train") -> Manifest:
    """Write images then the manifest. Returns the manifest."""
    if not bundles:
        raise ValidationError("cannot write an empty dataset")
    resolution = bundles[0].resolution
    regimes = {b.identity.regime for b in bundles}
    os.makedirs(directory, exist_ok=True)

    manifest = Manifest(
        resolution=resolution,
        regime=regimes.pop() if len(regimes) == 1 else "mixed",
        split=split,
    )
    for bundle in bundles:
        if bundle.resolution != resolution:
            raise ValidationError(
                f"bundle {bundle.identity.seed} has resolution {bundle.resolution}, expected {resolution}"
            )
        seed = bundle.identity.seed
        images = [bundle.reference] + [t.image for t in bundle.targets]
        files, digests = [], []
        for index, image in enumerate(images):
            name = image_name(seed, index)
            path = os.path.join(directory, name)
            save_png(image, path)
            files.append(name)
            digests.append(sha256_file(path))
        manifest.records.append({
            "seed": seed,
            "regime": bundle.identity.regime,
            "poses": [p.to_dict() for p in bundle.poses],
            "files": files,
            "sha256": digests,
        })

    _save_manifest(manifest, directory)
    logger.info(f"[dataset] wrote {len(bundles)} bundles to {directory}")
    return manifest


def _save_manifest(manifest: Manifest, directory: str):
    path = os.path.join(directory, MANIFEST_NAME)
    tmp_path = path + ".tmp"
    with open(tmp_path, 'w') as f:
        json.dump(manifest.to_dict(), f, indent=1)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp_path, path)


def load_manifest(directory: str) -> Manifest:
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise IntegrityError(f"no {MANIFEST_NAME} in {directory}")
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except (json.JSONDecodeError, IOError) as e:
        raise IntegrityError(f"{path} is not a readable manifest: {e}")

    for key in ("resolution", "records"):
        if key not in data:
            raise IntegrityError(f"{path} is missing '{key}'")

    manifest = Manifest(
        resolution=int(data["resolution"]),
        regime=data.get("regime", "pretrain"),
        split=data.get("split", "train"),
        generator_version=data.get("generator_version", GENERATOR_VERSION),
        records=data["records"],
    )
    for index, record in enumerate(manifest.records):
        _check_record(index, record)
    return manifest


def _check_record(index: int, record: dict):
    for key in ("seed", "poses", "files"):
        if key not in record:
            raise IntegrityError(f"record {index}: missing field '{key}'")
    label = f"record {index} (seed {record['seed']})"
    if len(record["files"]) != len(record["poses"]) + 1:
        raise IntegrityError(
            f"{label}: {len(record['files'])} files for {len(record['poses'])} poses plus reference"
        )
    try:
        [CameraPose.from_dict(p) for p in record["poses"]]
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise IntegrityError(f"{label}: invalid pose ({e})")


def read_dataset(directory: str) -> list:
    """Load every bundle, verifying files and hashes against the manifest."""
    manifest = load_manifest(directory)
    bundles = []
    for index, record in enumerate(manifest.records):
        label = f"record {index} (seed {record['seed']})"
        images = []
        for position, name in enumerate(record["files"]):
            path = os.path.join(directory, name)
            if not os.path.exists(path):
                raise IntegrityError(f"{label}: missing image file {name}")
            digests = record.get("sha256")
            if digests and sha256_file(path) != digests[position]:
                raise IntegrityError(f"{label}: image file {name} does not match its hash")
            images.append(load_png(path))

        shape = images[0].shape
        if shape != (3, manifest.resolution, manifest.resolution):
            raise IntegrityError(f"{label}: image shape {shape} does not match resolution {manifest.resolution}")

        identity = sample_identity(record["seed"], record.get("regime", manifest.regime))
        poses = [CameraPose.from_dict(p) for p in record["poses"]]
        targets = [View(image, pose) for image, pose in zip(images[1:], poses)]
        bundles.append(SceneBundle(identity, images[0], targets, manifest.resolution))
    return bundles


def regenerate_dataset(manifest: Manifest) -> list:
    """Rebuild every bundle from seeds and poses alone, without touching stored images."""
    if manifest.generator_version != GENERATOR_VERSION:
        raise IntegrityError(
            f"manifest generator version {manifest.generator_version} != {GENERATOR_VERSION}"
        )
    bundles = []
    for record in manifest.records:
        identity = sample_identity(record["seed"], record.get("regime", manifest.regime))
        poses = [CameraPose.from_dict(p) for p in record["poses"]]
        bundles.append(make_bundle(identity, poses, manifest.resolution))
    return bundles
