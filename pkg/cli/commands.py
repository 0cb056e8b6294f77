"""
Command implementations behind run_portrait.py.

Each cmd_* receives the parsed argparse namespace and its RunConfig,
writes its outputs under run.out and returns the main output path.
Library errors propagate; the entry script maps them to exit codes.
"""

import logging
import os
import re

import numpy as np

from common.errors import ConfigurationError, IntegrityError, ValidationError
from common.hashing import hash_config
from common.images import load_png, save_png, validate_image
from evaluation.ablations import ROTATION_ANGLES, ablate_noise, ablate_rotation, evaluate
from evaluation.embedder import get_embedder, save_embedder, train_embedder
from models.codec import load_codec, save_codec
from models.noise import INFERENCE_NOISE_LEVEL, INFERENCE_SEED, TRAIN_NOISE_LEVELS
from models.refiner import load_refiner, refine
from synthdata.coarse import degrade
from synthdata.dataset import generate_bundles, load_manifest as load_dataset_manifest, read_dataset, write_dataset
from synthdata.identity import CameraPose, sample_identity, split_seeds
from synthdata.render import render_view
from synthdata.scene import MAX_VIEWS
from training.checkpoint import MANIFEST_NAME, REFINER_DIR, checkpoint_name, load_manifest
from training.config import TrainConfig
from training.codec_trainer import train_codec
from training.trainer import StageData, Trainer, train_base

logger = logging.getLogger(__name__)

STEP_FIELDS = {"codec": "codec_steps", "base": "base_steps", "embedder": "embedder_steps"}
DATASET_NAME = re.compile(r"^(\d+)_(\d+)\.png$")


def parse_floats(text: str, name: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"--{name} must be a comma-separated list of numbers, got '{text}'")


def load_split(directory: str) -> list:
    if not directory:
        return []
    return read_dataset(directory)


# -- generate-data ------------------------------------------------------------

def cmd_generate_data(args, run) -> str:
    if not 1 <= args.views <= MAX_VIEWS:
        raise ValidationError(f"--views must lie in [1, {MAX_VIEWS}], got {args.views}")
    if args.identities < 1:
        raise ValidationError(f"--identities must be >= 1, got {args.identities}")
    seed = run.seed if run.seed is not None else 0
    train_seeds, eval_seeds = split_seeds(args.identities, args.identities, first_seed=args.first_seed)
    seeds = train_seeds if args.split == "train" else eval_seeds

    config = run.resolve(extra={"views": args.views, "resolution": args.res, "seed": seed})
    run.write_snapshot(config, {"identities": args.identities, "split": args.split, "regime": args.regime,
                                "first_seed": args.first_seed})
    bundles = generate_bundles(seeds, args.views, args.res, regime=args.regime, pose_seed=seed,
                               workers=args.workers)
    manifest = write_dataset(bundles, run.out, split=args.split)
    logger.info(f"[generate-data] {len(bundles)} {args.regime} bundles -> {run.out} "
                f"(manifest {manifest.content_hash()[:12]})")
    return run.out


# -- train --------------------------------------------------------------------

def cmd_train(args, run) -> str:
    extra = {}
    if args.stage in ("pretrain", "finetune"):
        extra["stage"] = args.stage
    if args.steps is not None:
        extra[STEP_FIELDS.get(args.stage, "steps")] = args.steps

    if args.resume:
        stored = load_manifest(args.resume).config
        config = run.resolve(base=stored, extra=extra)
        run.write_snapshot(config, {"stage": args.stage, "resume": args.resume})
        data = StageData(train=load_split(args.data), eval=load_split(args.eval_data), mix=load_split(args.mix_data))
        manifest = Trainer.resume(args.resume, data, config=config, output_dir=run.out,
                                  progress=args.progress).run()
        return _report_stage(manifest, run.out)

    train = load_split(args.data)
    if not train:
        raise ValidationError("train needs --data <dataset directory>")
    # data-derived defaults; the config document and --set still win
    derived = {"resolution": train[0].resolution,
               "views": min(min(b.views for b in train), TrainConfig.views)}
    config = run.resolve(base=derived, extra=extra)
    run.write_snapshot(config, {"stage": args.stage, "data": args.data, "codec": args.codec, "init": args.init})

    if args.stage == "codec":
        checkpoint = train_codec(train, config.codec_steps, batch_size=max(config.batch_size, 16),
                                 lr=config.lr_codec, seed=config.seed, device=config.device,
                                 degradation=config.degradation, progress=args.progress)
        return save_codec(checkpoint, os.path.join(run.out, "codec"))

    if args.stage == "embedder":
        embedder = train_embedder([b.identity.seed for b in train], resolution=config.resolution,
                                  steps=config.embedder_steps, seed=config.seed,
                                  regime=train[0].identity.regime, device=config.device, progress=args.progress)
        return save_embedder(embedder, os.path.join(run.out, "embedder"))

    data = StageData(train=train, eval=load_split(args.eval_data), mix=load_split(args.mix_data))
    if args.stage == "base":
        return train_base(config, data, args.codec, run.out, progress=args.progress)

    manifest = Trainer.fresh(config, data, args.codec, run.out, init_dir=args.init, progress=args.progress).run()
    return _report_stage(manifest, run.out)


def _report_stage(manifest, out: str) -> str:
    directory = os.path.join(out, "checkpoints", checkpoint_name(manifest.step))
    if manifest.metrics:
        logger.info(f"[train:{manifest.stage}] final eval {manifest.metrics}")
    return directory


# -- eval / ablations ---------------------------------------------------------

def resolve_model(checkpoint: str, codec_dir: str = None, views: int = None, device: str = "cpu") -> tuple:
    """(refiner, codec, manifest or None) from a stage checkpoint or a bare refiner directory."""
    if not checkpoint or not os.path.isdir(checkpoint):
        raise ConfigurationError(f"no checkpoint at {checkpoint}")
    manifest = None
    refiner_dir = checkpoint
    if os.path.exists(os.path.join(checkpoint, MANIFEST_NAME)):
        manifest = load_manifest(checkpoint)
        refiner_dir = os.path.join(checkpoint, REFINER_DIR)
        codec_dir = codec_dir or manifest.codec_dir
    if not codec_dir:
        raise ConfigurationError(f"no codec given for {checkpoint}; pass --codec")
    codec = load_codec(codec_dir, device).codec.freeze()
    if manifest is not None and codec.weights_hash() != manifest.codec_hash:
        raise IntegrityError(f"codec at {codec_dir} is not the one {checkpoint} was trained with")
    refiner = load_refiner(refiner_dir, device, views=views).eval()
    return refiner, codec, manifest


def _eval_setup(args, run):
    refiner, codec, manifest = resolve_model(args.checkpoint, args.codec)
    config = run.resolve(base=manifest.config if manifest else None)
    refiner.to(config.device)
    codec.to(config.device)
    embedder = get_embedder(args.embedder, config.device) if args.embedder else None
    if embedder is None:
        logger.warning("[eval] no --embedder given; identity and FID proxies are skipped")
    return refiner, codec, manifest, config, embedder


def _check_heldout(bundles: list, manifest, data_dir: str):
    if manifest is None:
        return
    overlap = sorted({b.identity.seed for b in bundles} & set(manifest.train_seeds))
    if overlap:
        raise IntegrityError(f"{data_dir} shares identities with the training set: {overlap[:10]}")


def cmd_eval(args, run) -> str:
    refiner, codec, manifest, config, embedder = _eval_setup(args, run)
    bundles = load_split(args.data)
    if not bundles:
        raise ValidationError("eval needs --data <held-out dataset directory>")
    _check_heldout(bundles, manifest, args.data)
    run.write_snapshot(config, {"checkpoint": args.checkpoint, "data": args.data, "embedder": args.embedder})

    report = evaluate(refiner, codec, bundles, config.degradation, embedder, r=args.r,
                      timing_trials=args.trials, config_hash=hash_config(config.to_dict()))
    report.write(run.out)
    return run.out


def cmd_ablate_noise(args, run) -> str:
    refiner, codec, manifest, config, embedder = _eval_setup(args, run)
    bundles = load_split(args.data)
    if not bundles:
        raise ValidationError("ablate-noise needs --data <held-out dataset directory>")
    _check_heldout(bundles, manifest, args.data)
    levels = parse_floats(args.levels, "levels")
    run.write_snapshot(config, {"checkpoint": args.checkpoint, "data": args.data, "levels": levels})

    report = ablate_noise(refiner, codec, bundles, levels, config.degradation, embedder,
                          config_hash=hash_config(config.to_dict()))
    report.write(run.out)
    return run.out


def cmd_ablate_rotation(args, run) -> str:
    refiner, codec, manifest, config, embedder = _eval_setup(args, run)
    angles = parse_floats(args.angles, "angles")
    if args.data:
        seeds = load_dataset_manifest(args.data).seeds[:args.identities]
    else:
        seeds = split_seeds(0, args.identities)[1]
    if manifest is not None and set(seeds) & set(manifest.train_seeds):
        raise IntegrityError("rotation identities overlap the training set")
    run.write_snapshot(config, {"checkpoint": args.checkpoint, "angles": angles, "seeds": seeds})

    report = ablate_rotation(refiner, codec, seeds, resolution=config.resolution, angles=angles,
                             degradation=config.degradation, embedder=embedder,
                             config_hash=hash_config(config.to_dict()))
    report.write(run.out)
    return run.out


# -- render -------------------------------------------------------------------

def cmd_render(args, run) -> str:
    """Refine novel views of one subject; writes coarse and refined PNGs side by side."""
    yaws = parse_floats(args.yaws, "yaws")
    if not 1 <= len(yaws) <= MAX_VIEWS:
        raise ValidationError(f"--yaws must list 1 to {MAX_VIEWS} angles, got {len(yaws)}")
    poses = [CameraPose(yaw=y) for y in yaws]

    refiner, codec, manifest = resolve_model(args.checkpoint, args.codec, views=len(yaws))
    config = run.resolve(base=manifest.config if manifest else None)

    if not os.path.exists(args.reference):
        raise ValidationError(f"reference image {args.reference} does not exist")
    reference = load_png(args.reference)
    validate_image(reference, "reference")

    identity_seed = args.identity
    if identity_seed is None:
        match = DATASET_NAME.match(os.path.basename(args.reference))
        if not match:
            raise ValidationError("cannot infer the subject from the reference file name; pass --identity")
        identity_seed = int(match.group(1))
    identity = sample_identity(identity_seed, args.regime)
    resolution = reference.shape[-1]

    seed = run.seed if run.seed is not None else INFERENCE_SEED
    run.write_snapshot(config, {"checkpoint": args.checkpoint, "reference": args.reference, "yaws": yaws,
                                "identity": identity_seed, "r": args.r, "noise_seed": seed})
    coarse = [
        degrade(render_view(identity, pose, resolution), pose, config.degradation, identity_seed * 1009 + i,
                identity_seed)
        for i, pose in enumerate(poses)
    ]
    refined = refine(reference, coarse, refiner, codec, r=args.r, seed=seed)

    os.makedirs(run.out, exist_ok=True)
    for i, (pose, c, image) in enumerate(zip(poses, coarse, refined)):
        tag = f"{i}_yaw{int(round(pose.yaw)):+d}"
        save_png(c.image, os.path.join(run.out, f"coarse_{tag}.png"))
        save_png(np.clip(image, 0.0, 1.0), os.path.join(run.out, f"refined_{tag}.png"))
    logger.info(f"[render] {len(poses)} views of identity {identity_seed} -> {run.out}")
    return run.out


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-noise": cmd_ablate_noise,
    "ablate-rotation": cmd_ablate_rotation,
    "render": cmd_render,
}

DEFAULT_LEVELS = ",".join(str(r) for r in TRAIN_NOISE_LEVELS)
DEFAULT_ANGLES = ",".join(str(int(a)) for a in ROTATION_ANGLES)
DEFAULT_R = INFERENCE_NOISE_LEVEL
