"""
Single-step multi-view refiner.

refine(): encode the reference and V coarse views, perturb the novel-view
latents at a fixed noise level, run the U-Net exactly once, drop the
reference slot and decode the rest.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn

from common.errors import ConfigurationError, IntegrityError, ValidationError
from common.hashing import hash_config, hash_tensors
from common.images import to_numpy, to_tensor, validate_image
from .layout import ViewLatentBatch, reshape_for_resblock, unfold_from_resblock
from .lora import adapter_state, apply_lora, base_state, load_adapter_state, merge_lora
from .noise import INFERENCE_NOISE_LEVEL, INFERENCE_SEED, NoiseLevel, add_noise
from .unet import RefinerUNet

logger = logging.getLogger(__name__)

META_NAME = "meta.json"
BASE_NAME = "base.pt"
ADAPTER_DIR = "adapters"


@dataclass
class RefinerConfig:
    latent_channels: int = 8
    widths: tuple = (32, 64, 128)
    heads: int = 4
    temb_dim: int = 128
    fixed_timestep: int = 400
    views: int = 2
    lora_rank: int = 4
    lora_alpha: float = 4.0

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if not 1 <= self.views <= 16:
            raise ValidationError(f"views must lie in [1, 16], got {self.views}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["widths"] = list(self.widths)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RefinerConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


class RefinerModel(nn.Module):
    def __init__(self, config: RefinerConfig = None):
        super().__init__()
        self.config = config or RefinerConfig()
        self.unet = RefinerUNet(
            latent_channels=self.config.latent_channels,
            widths=self.config.widths,
            heads=self.config.heads,
            temb_dim=self.config.temb_dim,
            fixed_timestep=self.config.fixed_timestep,
        )
        self.has_lora = False

    @property
    def views(self) -> int:
        return self.config.views

    @property
    def forward_calls(self) -> int:
        return self.unet.forward_calls

    def attach_lora(self) -> "RefinerModel":
        """Freeze the base U-Net and attach adapters to every attention projection."""
        if self.has_lora:
            return self
        apply_lora(self.unet, rank=self.config.lora_rank, alpha=self.config.lora_alpha)
        self.has_lora = True
        return self

    def merged(self) -> "RefinerModel":
        """Adapter-free copy with the deltas folded into the base weights."""
        model = merge_lora(self)
        model.has_lora = False
        return model

    def freeze_base(self):
        for name, p in self.named_parameters():
            if not (name.endswith(".down") or name.endswith(".up")):
                p.requires_grad_(False)

    def base_hash(self) -> str:
        return hash_tensors(base_state(self.unet))

    def arch_hash(self) -> str:
        layout = {k: list(v.shape) for k, v in base_state(self.unet).items()}
        config = self.config.to_dict()
        config.pop("views")      # no weight depends on V
        return hash_config({"layout": layout, "config": config})

    def forward(self, latents: torch.Tensor) -> torch.Tensor:
        return self.unet(latents, self.config.fixed_timestep)


def unet_forward(noisy: ViewLatentBatch, model: RefinerModel) -> ViewLatentBatch:
    """One U-Net pass over all V+1 slots. Slot 0 of the result is meant to be discarded."""
    if noisy.views != model.views:
        raise ValidationError(f"batch has {noisy.views} novel views, model expects {model.views}")
    return ViewLatentBatch(model(noisy.data))


def encode_views(reference: torch.Tensor, coarse: torch.Tensor, codec) -> ViewLatentBatch:
    """reference (B, 3, H, W) and coarse (B, V, 3, H, W) -> latents (B, V+1, C, H/4, W/4)."""
    if coarse.ndim != 5 or reference.ndim != 4:
        raise ValidationError(
            f"expected reference (B, 3, H, W) and coarse (B, V, 3, H, W), got "
            f"{tuple(reference.shape)} and {tuple(coarse.shape)}"
        )
    stacked = torch.cat([reference.unsqueeze(1), coarse], dim=1)
    latents = codec.encode(reshape_for_resblock(stacked))
    return ViewLatentBatch(unfold_from_resblock(latents, stacked.shape[1]))


def decode_novel(batch: ViewLatentBatch, codec) -> torch.Tensor:
    """Decode slots 1..V to images (B, V, 3, H, W); slot 0 is dropped."""
    novel = batch.novel
    images = codec.decode(reshape_for_resblock(novel))
    return unfold_from_resblock(images, novel.shape[1])


def refine_batch(reference: torch.Tensor, coarse: torch.Tensor, model: RefinerModel, codec,
                 r=INFERENCE_NOISE_LEVEL, seed: int = INFERENCE_SEED) -> torch.Tensor:
    """Differentiable batched refinement used by training and evaluation."""
    if coarse.shape[1] != model.views:
        raise ValidationError(f"got {coarse.shape[1]} coarse views, model expects {model.views}")
    latents = encode_views(reference, coarse, codec)
    noisy = add_noise(latents, NoiseLevel.of(r), rng_seed=seed)
    return decode_novel(unet_forward(noisy, model), codec)


def refine(reference, coarse_views: list, model: RefinerModel, codec,
           r=INFERENCE_NOISE_LEVEL, seed: int = INFERENCE_SEED) -> list:
    """Refine V coarse views of one subject; returns V numpy images in [0, 1]."""
    if len(coarse_views) != model.views:
        raise ValidationError(f"got {len(coarse_views)} coarse views, model expects {model.views}")
    validate_image(reference, "reference")
    for index, view in enumerate(coarse_views):
        validate_image(view.image, f"coarse view {index}")
        if view.image.shape != reference.shape:
            raise ValidationError(f"coarse view {index} shape {view.image.shape} != reference {reference.shape}")

    device = next(model.parameters()).device
    reference_t = to_tensor(reference, device)
    coarse_t = to_tensor([v.image for v in coarse_views], device).unsqueeze(0)
    with torch.no_grad():
        refined = refine_batch(reference_t, coarse_t, model, codec, r=r, seed=seed)
    return to_numpy(refined[0])


def save_refiner(model: RefinerModel, directory: str, extra: dict = None) -> dict:
    """Write base.pt, one blob per adapter and meta.json. Returns the meta dict."""
    os.makedirs(os.path.join(directory, ADAPTER_DIR), exist_ok=True)
    base = {k: v.detach().cpu() for k, v in base_state(model.unet).items()}
    torch.save(base, os.path.join(directory, BASE_NAME))

    adapter_files = {}
    for name, values in adapter_state(model.unet).items():
        filename = f"{name}.pt"
        torch.save(values, os.path.join(directory, ADAPTER_DIR, filename))
        adapter_files[name] = {"file": filename, "hash": hash_tensors({"down": values["down"], "up": values["up"]})}

    meta = {
        "views": model.views,
        "latent_channels": model.config.latent_channels,
        "fixed_timestep": model.config.fixed_timestep,
        "architecture_hash": model.arch_hash(),
        "base_hash": hash_tensors(base),
        "config": model.config.to_dict(),
        "adapters": adapter_files,
    }
    meta.update(extra or {})
    with open(os.path.join(directory, META_NAME), 'w') as f:
        json.dump(meta, f, indent=2)
        f.flush()
        os.fsync(f.fileno())
    return meta


def load_refiner(directory: str, device: str = "cpu", views: int = None) -> RefinerModel:
    """Rebuild a refiner from disk; `views` overrides the stored V."""
    meta_path = os.path.join(directory or "", META_NAME)
    if not directory or not os.path.exists(meta_path):
        raise ConfigurationError(f"no refiner checkpoint at {directory}")
    with open(meta_path, 'r') as f:
        meta = json.load(f)

    config = RefinerConfig.from_dict(meta["config"])
    if views is not None:
        config.views = views
        config.__post_init__()
    model = RefinerModel(config)

    base_path = os.path.join(directory, BASE_NAME)
    if not os.path.exists(base_path):
        raise IntegrityError(f"refiner checkpoint {directory} is missing {BASE_NAME}")
    base = torch.load(base_path, map_location="cpu", weights_only=True)
    if hash_tensors(base) != meta["base_hash"]:
        raise IntegrityError(f"{base_path} does not match its recorded hash")
    model.unet.load_state_dict(base)
    if model.arch_hash() != meta["architecture_hash"]:
        raise IntegrityError(f"refiner architecture in {directory} does not match meta.json")

    if meta.get("adapters"):
        model.attach_lora()
        state = {}
        for name, entry in meta["adapters"].items():
            path = os.path.join(directory, ADAPTER_DIR, entry["file"])
            if not os.path.exists(path):
                raise IntegrityError(f"refiner checkpoint {directory} is missing adapter file {entry['file']}")
            values = torch.load(path, map_location="cpu", weights_only=True)
            if hash_tensors({"down": values["down"], "up": values["up"]}) != entry["hash"]:
                raise IntegrityError(f"adapter file {entry['file']} does not match its recorded hash")
            state[name] = values
        load_adapter_state(model.unet, state)
    model.freeze_base()
    return model.to(device)
