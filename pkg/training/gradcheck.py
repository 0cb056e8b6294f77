"""
Finite-difference gradient check.

Compares autograd gradients against central differences
(f(p + h) - f(p - h)) / 2h on a random subset of scalar parameters.
Run it in float64; float32 differences are too noisy at small h.
"""

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class GradCheckResult:
    name: str
    index: int
    analytic: float
    numeric: float

    def close(self, rtol: float = 1e-2, atol: float = 1e-6) -> bool:
        scale = max(abs(self.analytic), abs(self.numeric))
        return abs(self.analytic - self.numeric) <= rtol * scale + atol


def finite_difference_check(loss_fn, parameters: list, samples: int = 10, h: float = 1e-4,
                            seed: int = 0) -> list:
    """
    loss_fn() -> scalar tensor; parameters is a list of (name, tensor) with
    requires_grad set. Returns one GradCheckResult per sampled entry.
    """
    names = [name for name, _ in parameters]
    tensors = [p for _, p in parameters]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)

    rng = np.random.default_rng(seed)
    results = []
    for _ in range(samples):
        which = int(rng.integers(len(tensors)))
        tensor = tensors[which]
        index = int(rng.integers(tensor.numel()))
        grad = grads[which]
        analytic = 0.0 if grad is None else float(grad.reshape(-1)[index])

        flat = tensor.data.view(-1)
        original = flat[index].item()
        with torch.no_grad():
            flat[index] = original + h
            plus = float(loss_fn())
            flat[index] = original - h
            minus = float(loss_fn())
            flat[index] = original
        results.append(GradCheckResult(names[which], index, analytic, (plus - minus) / (2 * h)))
    return results
