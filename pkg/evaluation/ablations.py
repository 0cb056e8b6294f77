"""
Evaluation protocols.

evaluate():         refined and coarse views against ground truth, the
                    full metric set, per view / yaw / regime, plus timing.
ablate_noise():     the same refinement at each fixed inference noise level.
ablate_rotation():  targets rendered at seven yaws from -90 to 90 degrees.
timing():           coarse-view production time and refine() wall time.

Coarse views for a bundle are always degraded with the identity seed, so
every protocol sees the same inputs for the same subject.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from common.errors import PortraitError, ValidationError
from models.noise import INFERENCE_NOISE_LEVEL, INFERENCE_SEED, TRAIN_NOISE_LEVELS, NoiseLevel
from models.refiner import refine
from synthdata.coarse import DegradationConfig, degrade, degrade_bundle
from synthdata.identity import CameraPose, IdentityParams, sample_identity
from synthdata.scene import make_bundle
from .metrics import (FID_MIN_IMAGES, fid_proxy, id_consistency_batch, l2_error, lpips_proxy_batch,
                      psnr, ssim)
from .report import EvalReport

logger = logging.getLogger(__name__)

ROTATION_ANGLES = (-90.0, -60.0, -30.0, 0.0, 30.0, 60.0, 90.0)
MIN_TIMING_TRIALS = 20
YAW_BUCKET = 30.0


@dataclass
class RefinedBundle:
    bundle: object
    coarse: list
    refined: list


def coarse_views(bundle, degradation: DegradationConfig, views: int = None) -> list:
    coarse = degrade_bundle(bundle, degradation, rng_seed=bundle.identity.seed)
    return coarse[:views] if views else coarse


def refine_bundles(model, codec, bundles: list, degradation: DegradationConfig,
                   r=INFERENCE_NOISE_LEVEL, seed: int = INFERENCE_SEED) -> list:
    results = []
    for bundle in bundles:
        if bundle.views < model.views:
            raise ValidationError(f"bundle {bundle.identity.seed} has {bundle.views} views, model needs {model.views}")
        coarse = coarse_views(bundle, degradation, model.views)
        refined = refine(bundle.reference, coarse, model, codec, r=r, seed=seed)
        results.append(RefinedBundle(bundle=bundle, coarse=coarse, refined=refined))
    return results


def score_pairs(outputs: list, targets: list, codec, embedder=None) -> dict:
    """Per-pair metric arrays."""
    scores = {
        "l2": np.array([l2_error(o, t) for o, t in zip(outputs, targets)]),
        "psnr": np.array([psnr(o, t) for o, t in zip(outputs, targets)]),
        "ssim": np.array([ssim(o, t) for o, t in zip(outputs, targets)]),
        "lpips_proxy": lpips_proxy_batch(outputs, targets, codec),
    }
    if embedder is not None:
        scores["id_proxy"] = id_consistency_batch(outputs, targets, embedder)
    return scores


def _means(scores: dict, mask=None) -> dict:
    return {
        name: float(np.mean(values if mask is None else values[mask]))
        for name, values in scores.items()
    }


def evaluate(model, codec, bundles: list, degradation: DegradationConfig = None, embedder=None,
             r=INFERENCE_NOISE_LEVEL, timing_trials: int = MIN_TIMING_TRIALS,
             config_hash: str = "") -> EvalReport:
    """Refined-vs-GT and coarse-vs-GT metrics, side by side."""
    if not bundles:
        raise ValidationError("evaluation needs at least one bundle")
    degradation = degradation or DegradationConfig()
    results = refine_bundles(model, codec, bundles, degradation, r=r)

    refined, coarse, truth, view_index, yaws, regimes = [], [], [], [], [], []
    for result in results:
        for index, (target, c, out) in enumerate(zip(result.bundle.targets, result.coarse, result.refined)):
            refined.append(out)
            coarse.append(c.image)
            truth.append(target.image)
            view_index.append(index + 1)
            yaws.append(target.pose.yaw)
            regimes.append(result.bundle.identity.regime)
    view_index, regimes = np.array(view_index), np.array(regimes)
    buckets = np.round(np.array(yaws) / YAW_BUCKET) * YAW_BUCKET

    refined_scores = score_pairs(refined, truth, codec, embedder)
    coarse_scores = score_pairs(coarse, truth, codec, embedder)
    refined_means, coarse_means = _means(refined_scores), _means(coarse_scores)
    summary = {name: {"refined": refined_means[name], "coarse": coarse_means[name]} for name in refined_means}
    if embedder is not None and len(truth) >= FID_MIN_IMAGES:
        summary["fid_proxy"] = {
            "refined": fid_proxy(refined, truth, embedder),
            "coarse": fid_proxy(coarse, truth, embedder),
        }
    elif embedder is not None:
        logger.warning(f"[eval] fid_proxy skipped: {len(truth)} images, needs {FID_MIN_IMAGES}")

    report = EvalReport(kind="eval", summary=summary, config_hash=config_hash)
    for v in sorted(set(view_index.tolist())):
        report.per_view.append({"view": int(v), **_means(refined_scores, view_index == v)})
    for yaw in sorted(set(buckets.tolist())):
        mask = buckets == yaw
        report.per_angle.append({"yaw": float(yaw), "count": int(mask.sum()), **_means(refined_scores, mask)})
    for regime in sorted(set(regimes.tolist())):
        mask = regimes == regime
        report.per_regime[regime] = {
            "refined": _means(refined_scores, mask),
            "coarse": _means(coarse_scores, mask),
        }

    registration_ms, generation_ms = timing(model, codec, bundles[0], degradation, timing_trials)
    report.timing = {
        "registration_ms": registration_ms,
        "generation_ms": generation_ms,
        "generation_ms_per_view": generation_ms / model.views,
        "views": model.views,
        "trials": timing_trials,
    }
    logger.info(
        f"[eval] {len(truth)} views: PSNR {summary['psnr']['coarse']:.2f} -> {summary['psnr']['refined']:.2f} dB, "
        f"SSIM {summary['ssim']['coarse']:.3f} -> {summary['ssim']['refined']:.3f}"
    )
    return report


def ablate_noise(model, codec, bundles: list, levels: tuple = TRAIN_NOISE_LEVELS,
                 degradation: DegradationConfig = None, embedder=None, config_hash: str = "") -> EvalReport:
    """One row per fixed inference noise level."""
    levels = [NoiseLevel.of(r) for r in levels]
    degradation = degradation or DegradationConfig()
    report = EvalReport(kind="ablate_noise", config_hash=config_hash)

    for level in levels:
        results = refine_bundles(model, codec, bundles, degradation, r=level)
        outputs = [out for res in results for out in res.refined]
        truth = [t.image for res in results for t in res.bundle.targets[:model.views]]
        report.per_noise.append({"r": level.r, **_means(score_pairs(outputs, truth, codec, embedder))})
        logger.info(f"[ablate-noise] r={level.r:.1f} PSNR {report.per_noise[-1]['psnr']:.3f}")

    for metric in report.per_noise[0]:
        if metric == "r":
            continue
        values = [row[metric] for row in report.per_noise]
        report.summary[f"{metric}_spread"] = float(max(values) - min(values))
    return report


def rotation_poses(angle: float, views: int) -> list:
    """Slot 1 sits at `angle`, slot 2 at its mirror, the rest repeat `angle`."""
    poses = [CameraPose(yaw=angle)]
    if views >= 2:
        poses.append(CameraPose(yaw=-angle))
    poses.extend(CameraPose(yaw=angle) for _ in range(views - len(poses)))
    return poses


def ablate_rotation(model, codec, identities: list, resolution: int = 64, angles: tuple = ROTATION_ANGLES,
                    degradation: DegradationConfig = None, embedder=None, config_hash: str = "") -> EvalReport:
    """
    Renders each identity with slot 1 at every angle and scores slot 1.
    `identities` holds IdentityParams or seeds.
    """
    degradation = degradation or DegradationConfig()
    identities = [i if isinstance(i, IdentityParams) else sample_identity(int(i)) for i in identities]
    if not identities:
        raise ValidationError("rotation ablation needs at least one identity")
    report = EvalReport(kind="ablate_rotation", config_hash=config_hash)

    for angle in angles:
        poses = rotation_poses(float(angle), model.views)
        bundles = [make_bundle(identity, poses, resolution) for identity in identities]
        results = refine_bundles(model, codec, bundles, degradation)
        outputs = [res.refined[0] for res in results]
        truth = [res.bundle.targets[0].image for res in results]
        report.per_angle.append({"yaw": float(angle), **_means(score_pairs(outputs, truth, codec, embedder))})

    by_yaw = {row["yaw"]: row for row in report.per_angle}
    if 0.0 in by_yaw:
        report.summary["ssim_at_0"] = by_yaw[0.0]["ssim"]
    for yaw in (-90.0, 90.0):
        if yaw in by_yaw:
            report.summary[f"ssim_at_{int(yaw)}"] = by_yaw[yaw]["ssim"]
    return report


def timing(model, codec, bundle, degradation: DegradationConfig = None, n_trials: int = MIN_TIMING_TRIALS) -> tuple:
    """
    Median (registration_ms, generation_ms) over n_trials. Each refine()
    must run the U-Net exactly once.
    """
    if n_trials < MIN_TIMING_TRIALS:
        raise ValidationError(f"timing needs at least {MIN_TIMING_TRIALS} trials, got {n_trials}")
    degradation = degradation or DegradationConfig()
    targets = bundle.targets[:model.views]

    coarse = coarse_views(bundle, degradation, model.views)
    refine(bundle.reference, coarse, model, codec)     # warm-up

    registration, generation = [], []
    for trial in range(n_trials):
        start = time.perf_counter()
        coarse = [degrade(t.image, t.pose, degradation, bundle.identity.seed * 1009 + i, bundle.identity.seed)
                  for i, t in enumerate(targets)]
        registration.append((time.perf_counter() - start) * 1000.0)

        calls = model.forward_calls
        start = time.perf_counter()
        refine(bundle.reference, coarse, model, codec)
        generation.append((time.perf_counter() - start) * 1000.0)
        if model.forward_calls - calls != 1:
            raise PortraitError(f"refine ran the U-Net {model.forward_calls - calls} times, expected once")

    return float(np.median(registration)), float(np.median(generation))
