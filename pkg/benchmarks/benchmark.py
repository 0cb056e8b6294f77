"""
Benchmarks for the refiner pipeline.

Latency does not depend on trained weights, so freshly initialized
models are used throughout.
"""

import os
import sys
import time

import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from evaluation.ablations import timing
from models.codec import LatentCodec
from models.refiner import RefinerConfig, RefinerModel
from synthdata.dataset import generate_bundles
from synthdata.identity import CameraPose, sample_identity
from synthdata.scene import make_bundle


def _models(views):
    torch.manual_seed(0)
    codec = LatentCodec().freeze()
    refiner = RefinerModel(RefinerConfig(views=views)).attach_lora().eval()
    return refiner, codec


def benchmark_generation_vs_views():
    """
    Benchmark: refine() wall time as the number of novel views grows.
    """
    print("\n" + "="*60)
    print("BENCHMARK: Generation Time vs Views (64x64)")
    print("="*60)

    identity = sample_identity(100000)
    for views in [1, 2, 4, 8, 16]:
        refiner, codec = _models(views)
        poses = [CameraPose(yaw=-60.0 + 120.0 * i / max(views - 1, 1)) for i in range(views)]
        bundle = make_bundle(identity, poses, 64)
        registration_ms, generation_ms = timing(refiner, codec, bundle, n_trials=20)

        print(f"Views: {views:2d} | "
              f"Registration: {registration_ms:7.2f} ms | "
              f"Generation: {generation_ms:7.2f} ms | "
              f"Per view: {generation_ms / views:6.2f} ms")


def benchmark_generation_vs_resolution():
    """
    Benchmark: refine() wall time for two views across resolutions.
    """
    print("\n" + "="*60)
    print("BENCHMARK: Generation Time vs Resolution (V=2)")
    print("="*60)

    identity = sample_identity(100001)
    refiner, codec = _models(2)
    for resolution in [32, 64, 128]:
        bundle = make_bundle(identity, [CameraPose(yaw=30.0), CameraPose(yaw=-30.0)], resolution)
        registration_ms, generation_ms = timing(refiner, codec, bundle, n_trials=20)

        print(f"Resolution: {resolution:3d} | "
              f"Registration: {registration_ms:7.2f} ms | "
              f"Generation: {generation_ms:7.2f} ms")


def benchmark_data_generation():
    """
    Benchmark: synthetic bundle throughput with one and four render threads.
    """
    print("\n" + "="*60)
    print("BENCHMARK: Dataset Generation Throughput")
    print("="*60)

    seeds = list(range(64))
    for workers in [1, 4]:
        start = time.time()
        bundles = generate_bundles(seeds, views=2, resolution=64, workers=workers)
        elapsed = time.time() - start

        print(f"Workers: {workers} | "
              f"Bundles: {len(bundles)} | "
              f"Time: {elapsed:.3f}s | "
              f"Throughput: {len(bundles) / elapsed:.1f} bundles/sec")


def run_all_benchmarks():
    """Run all benchmarks."""
    print("\n" + "#"*60)
    print("# PORTRAIT REFINER BENCHMARKS")
    print("#"*60)

    benchmark_generation_vs_views()
    benchmark_generation_vs_resolution()
    benchmark_data_generation()

    print("\n" + "#"*60)
    print("# BENCHMARKS COMPLETE")
    print("#"*60)


if __name__ == "__main__":
    run_all_benchmarks()
