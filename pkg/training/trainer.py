"""
Two-stage refiner training.

pretrain_base():  short r=0 reconstruction pass that gives the base U-Net
                  weights; they are frozen afterwards.
Trainer:          LoRA + discriminator training for one stage (pretrain on
                  the broad synthetic regime, finetune on the narrow one),
                  alternating generator and discriminator steps.

Checkpoints carry the config hash plus the codec and base weight hashes,
and resume() refuses to continue under a different config or codec.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from common.errors import ConfigurationError, IntegrityError, NumericalAbort, ValidationError
from evaluation.ablations import refine_bundles
from evaluation.metrics import psnr, ssim
from models.codec import load_codec
from models.discriminator import PatchDiscriminator
from models.layout import reshape_for_resblock
from models.noise import INFERENCE_NOISE_LEVEL, add_noise
from models.refiner import (RefinerConfig, RefinerModel, decode_novel, encode_views, load_refiner,
                            save_refiner, unet_forward)
from .batches import BatchFeeder, BatchSource
from .checkpoint import (MANIFEST_NAME, OPTIMIZER_NAME, DISCRIMINATOR_NAME, REFINER_DIR, CheckpointManifest,
                         checkpoint_name, load_manifest, load_state, save_checkpoint)
from .config import TrainConfig
from .losses import discriminator_loss, generator_loss
from .train_log import TrainLog

logger = logging.getLogger(__name__)

BASE_SEED_OFFSET = 7919


@dataclass
class StageData:
    train: list
    eval: list = field(default_factory=list)
    mix: list = field(default_factory=list)

    def check_disjoint(self):
        train_seeds = {b.identity.seed for b in self.train} | {b.identity.seed for b in self.mix}
        overlap = sorted(train_seeds & {b.identity.seed for b in self.eval})
        if overlap:
            raise IntegrityError(f"train and eval sets share identities {overlap[:10]}")

    @property
    def train_seeds(self) -> list:
        return sorted({b.identity.seed for b in self.train} | {b.identity.seed for b in self.mix})


def set_deterministic(seed: int):
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def frozen_codec(codec_dir: str, device: str = "cpu"):
    """Load the stage's codec and freeze it; missing codec is a configuration error."""
    if not codec_dir:
        raise ConfigurationError("training needs a codec checkpoint; run `train --stage codec` first")
    return load_codec(codec_dir, device).codec.freeze()


def pretrain_base(refiner: RefinerModel, codec, bundles: list, config: TrainConfig,
                  progress: bool = False) -> list:
    """
    Latent reconstruction of ground-truth targets from clean (r=0) coarse
    latents, all U-Net weights trainable. Returns the per-step losses.
    """
    if refiner.has_lora:
        raise ValidationError("pretrain_base runs before adapters are attached")
    base_config = dataclasses.replace(config, noise_levels=(0.0,), seed=config.seed + BASE_SEED_OFFSET)
    source = BatchSource(bundles, base_config)
    device = config.device
    optimizer = torch.optim.Adam(refiner.parameters(), lr=config.lr_base)
    losses = []

    refiner.train()
    for step in tqdm(range(config.base_steps), desc="train:base", disable=not progress):
        batch = source.make(step).to(device)
        with torch.no_grad():
            latents = encode_views(batch.reference, batch.coarse, codec)
            targets = codec.encode(reshape_for_resblock(batch.targets))
        output = unet_forward(latents, refiner)
        loss = F.mse_loss(reshape_for_resblock(output.novel), targets)
        if not torch.isfinite(loss):
            raise NumericalAbort(f"base pretraining loss is not finite at step {step}", step=step)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
        if step % 500 == 0:
            logger.debug(f"[train:base] step {step} loss {losses[-1]:.6f}")
    refiner.eval()
    if losses:
        logger.info(f"[train:base] {len(losses)} steps, loss {losses[0]:.5f} -> {losses[-1]:.5f}")
    return losses


def train_base(config: TrainConfig, data: StageData, codec_dir: str, output_dir: str,
               progress: bool = False) -> str:
    """Build, pretrain and save a base refiner (no adapters). Returns its directory."""
    set_deterministic(config.seed)
    codec = frozen_codec(codec_dir, config.device)
    refiner = RefinerModel(RefinerConfig(views=config.views, lora_rank=config.lora_rank,
                                         lora_alpha=config.lora_alpha)).to(config.device)
    losses = pretrain_base(refiner, codec, data.train, config, progress)
    directory = os.path.join(output_dir, "base")
    save_refiner(refiner, directory, extra={
        "codec_hash": codec.weights_hash(),
        "base_steps": config.base_steps,
        "final_loss": losses[-1] if losses else None,
    })
    return directory


def stage_snapshot(refiner: RefinerModel, codec, bundles: list, config: TrainConfig) -> dict:
    """Mean refined-vs-GT and coarse-vs-GT PSNR/SSIM on held-out bundles."""
    bundles = [b for b in bundles[:config.eval_limit] if b.views >= refiner.views]
    if not bundles:
        return {}
    results = refine_bundles(refiner, codec, bundles, config.degradation, r=INFERENCE_NOISE_LEVEL)
    scores = {"psnr_refined": [], "psnr_coarse": [], "ssim_refined": [], "ssim_coarse": []}
    for result in results:
        for target, coarse, refined in zip(result.bundle.targets, result.coarse, result.refined):
            scores["psnr_refined"].append(psnr(refined, target.image))
            scores["psnr_coarse"].append(psnr(coarse.image, target.image))
            scores["ssim_refined"].append(ssim(refined, target.image))
            scores["ssim_coarse"].append(ssim(coarse.image, target.image))
    return {name: float(np.mean(values)) for name, values in scores.items()}


class Trainer:
    def __init__(self, config: TrainConfig, data: StageData, codec, codec_dir: str, refiner: RefinerModel,
                 output_dir: str, discriminator: PatchDiscriminator = None, step: int = 0,
                 parent: str = None, progress: bool = False):
        data.check_disjoint()
        if not refiner.has_lora:
            raise ValidationError("stage training needs a refiner with adapters attached")
        if refiner.views != config.views:
            raise ValidationError(f"refiner has V={refiner.views}, config has V={config.views}")
        self.config = config
        self.data = data
        self.codec = codec
        self.codec_dir = os.path.abspath(codec_dir)
        self.refiner = refiner
        self.discriminator = discriminator or PatchDiscriminator().to(config.device)
        self.output_dir = output_dir
        self.step = step
        self.parent = parent
        self.progress = progress
        self.metrics = {}
        self.last_good = None

        self.codec_hash = codec.weights_hash()
        self.base_hash = refiner.base_hash()
        self.opt_g = torch.optim.Adam([p for p in refiner.parameters() if p.requires_grad],
                                      lr=config.lr_generator)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=config.lr_discriminator)

        os.makedirs(output_dir, exist_ok=True)
        self.log = TrainLog(os.path.join(output_dir, "train_log.jsonl"))

    # -- construction -------------------------------------------------------

    @classmethod
    def fresh(cls, config: TrainConfig, data: StageData, codec_dir: str, output_dir: str,
              init_dir: str = None, progress: bool = False) -> "Trainer":
        """
        New stage run. `init_dir` may be a base refiner directory or a stage
        checkpoint (finetune starts from the pretrain checkpoint). Without it
        the base U-Net is pretrained in place first.
        """
        set_deterministic(config.seed)
        codec = frozen_codec(codec_dir, config.device)

        if init_dir:
            refiner_dir = init_dir
            if os.path.exists(os.path.join(init_dir, MANIFEST_NAME)):
                parent = load_manifest(init_dir)
                if parent.codec_hash != codec.weights_hash():
                    raise IntegrityError(f"{init_dir} was trained against a different codec")
                refiner_dir = os.path.join(init_dir, REFINER_DIR)
            refiner = load_refiner(refiner_dir, config.device, views=config.views)
        else:
            refiner = RefinerModel(RefinerConfig(views=config.views, lora_rank=config.lora_rank,
                                                 lora_alpha=config.lora_alpha)).to(config.device)
            pretrain_base(refiner, codec, data.train, config, progress)
        refiner.attach_lora()
        refiner.to(config.device)

        trainer = cls(config, data, codec, codec_dir, refiner, output_dir, parent=init_dir, progress=progress)
        trainer.log.clear()
        return trainer

    @classmethod
    def resume(cls, checkpoint_dir: str, data: StageData, config: TrainConfig = None, steps: int = None,
               output_dir: str = None, progress: bool = False) -> "Trainer":
        """
        Continue from a checkpoint. Hashes are verified; a config whose
        identity hash differs from the checkpoint's is refused.
        """
        manifest = load_manifest(checkpoint_dir)
        stored = TrainConfig.from_dict(manifest.config)
        if config is not None and config.identity_hash() != manifest.config_hash:
            raise IntegrityError(
                f"refusing to resume {checkpoint_dir}: config hash differs from the checkpoint's"
            )
        config = config or stored
        if steps is not None:
            config = dataclasses.replace(config, steps=steps)

        set_deterministic(config.seed)
        codec = frozen_codec(manifest.codec_dir, config.device)
        if codec.weights_hash() != manifest.codec_hash:
            raise IntegrityError(f"codec at {manifest.codec_dir} changed since {checkpoint_dir} was written")

        refiner = load_refiner(os.path.join(checkpoint_dir, REFINER_DIR), config.device)
        if refiner.base_hash() != manifest.base_hash:
            raise IntegrityError(f"base weights in {checkpoint_dir} do not match the manifest")
        discriminator = PatchDiscriminator()
        discriminator.load_state_dict(load_state(checkpoint_dir, DISCRIMINATOR_NAME))
        discriminator.to(config.device)

        output_dir = output_dir or os.path.dirname(os.path.dirname(os.path.abspath(checkpoint_dir)))
        trainer = cls(config, data, codec, manifest.codec_dir, refiner, output_dir,
                      discriminator=discriminator, step=manifest.step, parent=manifest.parent,
                      progress=progress)
        optimizers = load_state(checkpoint_dir, OPTIMIZER_NAME)
        trainer.opt_g.load_state_dict(optimizers["generator"])
        trainer.opt_d.load_state_dict(optimizers["discriminator"])
        trainer.metrics = manifest.metrics
        trainer.last_good = checkpoint_dir
        trainer.log.truncate_after(manifest.step)
        logger.info(f"[train:{config.stage}] resumed at step {manifest.step} from {checkpoint_dir}")
        return trainer

    # -- training -----------------------------------------------------------

    def train_step(self, batch) -> dict:
        config = self.config
        with torch.no_grad():
            latents = encode_views(batch.reference, batch.coarse, self.codec)
        noisy = add_noise(latents, batch.noise_level, rng_seed=batch.noise_seed)
        refined = decode_novel(unet_forward(noisy, self.refiner), self.codec)
        fake = reshape_for_resblock(refined)
        real = reshape_for_resblock(batch.targets)

        # generator
        self.discriminator.requires_grad_(False)
        total, report = generator_loss(fake, real, self.discriminator, self.codec, config.loss_weights)
        if not torch.isfinite(total):
            raise NumericalAbort(
                f"generator loss is not finite at step {batch.step}; last good checkpoint: {self.last_good}",
                step=batch.step, last_good=self.last_good,
            )
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()

        # discriminator
        self.discriminator.requires_grad_(True)
        d_loss = discriminator_loss(fake, real, self.discriminator)
        if not torch.isfinite(d_loss):
            raise NumericalAbort(
                f"discriminator loss is not finite at step {batch.step}; last good checkpoint: {self.last_good}",
                step=batch.step, last_good=self.last_good,
            )
        self.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        self.opt_d.step()

        report.gan_d = float(d_loss.detach())
        self.log.append(batch.step + 1, config.stage, kind="step", r=batch.noise_level, **report.to_dict())
        return report.to_dict()

    def run(self) -> CheckpointManifest:
        config = self.config
        if self.step == 0:
            self.save()

        source = BatchSource(self.data.train, config, self.data.mix)
        feeder = BatchFeeder(source, self.step, config.steps, config.prefetch)
        self.refiner.train()
        self.discriminator.train()
        for batch in tqdm(feeder, total=len(feeder), desc=f"train:{config.stage}", disable=not self.progress):
            report = self.train_step(batch.to(config.device))
            self.step = batch.step + 1
            if self.step % 100 == 0:
                logger.info(f"[train:{config.stage}] step {self.step} total_g={report['total_g']:.5f} "
                            f"gan_d={report['gan_d']:.4f}")
            if config.eval_every and self.step % config.eval_every == 0:
                self.snapshot()
            if config.checkpoint_every and self.step % config.checkpoint_every == 0:
                self.save()

        if self.last_good is None or load_manifest(self.last_good, verify=False).step != self.step:
            if self.data.eval and self.step > 0:
                self.snapshot()
            self.save()
        return load_manifest(self.last_good, verify=False)

    def snapshot(self) -> dict:
        self.refiner.eval()
        self.metrics = stage_snapshot(self.refiner, self.codec, self.data.eval, self.config)
        self.refiner.train()
        if self.metrics:
            self.log.append(self.step, self.config.stage, kind="eval", **self.metrics)
            logger.info(
                f"[train:{self.config.stage}] eval step {self.step}: PSNR "
                f"{self.metrics['psnr_coarse']:.2f} -> {self.metrics['psnr_refined']:.2f} dB"
            )
        return self.metrics

    def verify_frozen(self):
        if self.codec.weights_hash() != self.codec_hash:
            raise IntegrityError("codec weights changed during training")
        if self.refiner.base_hash() != self.base_hash:
            raise IntegrityError("base U-Net weights changed during training")

    def save(self) -> str:
        self.verify_frozen()
        directory =os.path.join(self.output_dir, "checkpoints", checkpoint_name(self.step))
        manifest = CheckpointManifest(
            stage=self.config.stage,
            step=self.step,
            config=self.config.to_dict(),
            config_hash=self.config.identity_hash(),
            codec_dir=self.codec_dir,
            codec_hash=self.codec_hash,
            base_hash=self.base_hash,
            train_seeds=self.data.train_seeds,
            metrics=dict(self.metrics),
            parent=self.parent,
        )
        save_checkpoint(directory, manifest, self.refiner, self.discriminator,
                        {"generator": self.opt_g, "discriminator": self.opt_d})
        self.last_good = directory
        return directory


def train_stage(config: TrainConfig, data: StageData, codec_dir: str, output_dir: str,
                init_dir: str = None, progress: bool = False) -> CheckpointManifest:
    return Trainer.fresh(config, data, codec_dir, output_dir, init_dir, progress).run()


def resume(checkpoint_dir: str, data: StageData, config: TrainConfig = None, steps: int = None,
           progress: bool = False) -> Trainer:
    """Models and config restored from a checkpoint, ready to run()."""
    return Trainer.resume(checkpoint_dir, data, config=config, steps=steps, progress=progress)
