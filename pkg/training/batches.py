"""
Per-step training batches.

Each batch is a pure function of (seed, step): the bundles drawn, the
degradation seeds, the noise level and the noise seed all come from
np.random.default_rng([seed, step]). A resumed run therefore sees
exactly the batches an uninterrupted run would have seen.
"""

import logging
import queue
import threading
from dataclasses import dataclass

import numpy as np
import torch

from common.errors import ValidationError
from common.images import to_tensor
from models.noise import sample_train_noise_level
from synthdata.coarse import degrade

logger = logging.getLogger(__name__)


@dataclass
class StepBatch:
    step: int
    reference: torch.Tensor      # (B, 3, H, W)
    coarse: torch.Tensor         # (B, V, 3, H, W)
    targets: torch.Tensor        # (B, V, 3, H, W)
    noise_level: float
    noise_seed: int
    seeds: list

    def to(self, device) -> "StepBatch":
        self.reference = self.reference.to(device)
        self.coarse = self.coarse.to(device)
        self.targets = self.targets.to(device)
        return self


class BatchSource:
    """
    Draws training batches from a main bundle pool and, with probability
    `regime_mix` per sample, from a secondary pool.
    """

    def __init__(self, bundles: list, config, mix_bundles: list = None):
        if not bundles:
            raise ValidationError("training needs at least one bundle")
        for bundle in list(bundles) + list(mix_bundles or []):
            if bundle.views < config.views:
                raise ValidationError(
                    f"bundle {bundle.identity.seed} has {bundle.views} views, training needs {config.views}"
                )
            if bundle.resolution != config.resolution:
                raise ValidationError(
                    f"bundle {bundle.identity.seed} is {bundle.resolution}px, config says {config.resolution}px"
                )
        self.bundles = list(bundles)
        self.mix_bundles = list(mix_bundles or [])
        self.config = config

    def make(self, step: int) -> StepBatch:
        config = self.config
        rng = np.random.default_rng([config.seed, step])
        references, coarse, targets, seeds = [], [], [], []

        for _ in range(config.batch_size):
            pool = self.bundles
            if self.mix_bundles and rng.random() < config.regime_mix:
                pool = self.mix_bundles
            bundle = pool[int(rng.integers(len(pool)))]
            chosen = bundle.targets
            if bundle.views > config.views:
                picks = np.sort(rng.choice(bundle.views, size=config.views, replace=False))
                chosen = [bundle.targets[i] for i in picks]
            degrade_seed = int(rng.integers(2 ** 31))

            references.append(bundle.reference)
            targets.append(np.stack([view.image for view in chosen]))
            coarse.append(np.stack([
                degrade(view.image, view.pose, config.degradation, degrade_seed * 1009 + i,
                        bundle.identity.seed).image
                for i, view in enumerate(chosen)
            ]))
            seeds.append(bundle.identity.seed)

        level = sample_train_noise_level(rng, config.noise_levels)
        return StepBatch(
            step=step,
            reference=to_tensor(references),
            coarse=torch.from_numpy(np.stack(coarse)),
            targets=torch.from_numpy(np.stack(targets)),
            noise_level=level.r,
            noise_seed=int(rng.integers(2 ** 31)),
            seeds=seeds,
        )


class BatchFeeder:
    """
    Background thread that prepares batches for steps [start, stop)
    into a bounded queue. Iterating yields them in step order.
    """

    def __init__(self, source: BatchSource, start: int, stop: int, prefetch: int = 4):
        self.source = source
        self.start = start
        self.stop = stop
        self._queue = queue.Queue(maxsize=max(1, prefetch))
        self._stop_event = threading.Event()
        self._thread = threading.Thread(target=self._fill_loop, daemon=True)
        self._started = False

    def _fill_loop(self):
        for step in range(self.start, self.stop):
            if self._stop_event.is_set():
                return
            try:
                item = self.source.make(step)
            except Exception as e:
                item = e
            while not self._stop_event.is_set():
                try:
                    self._queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if isinstance(item, Exception):
                return

    def __iter__(self):
        if self._started:
            raise RuntimeError("a BatchFeeder can only be iterated once")
        self._started = True
        if self.start < self.stop:
            self._thread.start()
        try:
            for _ in range(self.start, self.stop):
                item = self._queue.get()
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            self.shutdown()

    def __len__(self):
        return max(0, self.stop - self.start)

    def shutdown(self):
        self._stop_event.set()
        if self._thread.is_alive():
            self._thread.join(timeout=5)
