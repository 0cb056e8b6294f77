"""
Low-rank adapters on frozen linear layers.

Each adapter wraps an existing nn.Linear and adds scale * up @ down.
`up` starts at zero, so a freshly attached adapter changes nothing.
"""

import copy
import logging
import math

import torch
from torch import nn

from common.errors import ValidationError
from common.hashing import hash_tensors

logger = logging.getLogger(__name__)

ATTENTION_TARGETS = ("to_q", "to_k", "to_v", "to_out")


class LoRAAdapter(nn.Module):
    """
    Wraps an nn.Linear with a trainable low-rank delta.
    down: (rank, in_features), up: (out_features, rank).
    """

    def __init__(self, module: nn.Linear, target_name: str, rank: int = 4, alpha: float = None):
        super().__init__()
        if not isinstance(module, nn.Linear):
            raise ValidationError(f"LoRA target {target_name} is not a linear layer")
        if rank < 1:
            raise ValidationError(f"LoRA rank must be >= 1, got {rank}")
        self.module = module
        self.target_name = target_name
        self.rank = rank
        self.scale = (alpha if alpha is not None else rank) / rank

        self.down = nn.Parameter(torch.zeros(rank, module.in_features))
        self.up = nn.Parameter(torch.zeros(module.out_features, rank))
        nn.init.kaiming_uniform_(self.down, a=math.sqrt(5))
        nn.init.zeros_(self.up)

        for p in self.module.parameters():
            p.requires_grad = False

    def delta(self) -> torch.Tensor:
        return self.scale * (self.up @ self.down)

    def forward(self, x):
        base = self.module(x)
        return base + ((x @ self.down.T) @ self.up.T) * self.scale


def find_parent_and_attr(model: nn.Module, module_name: str):
    parts = module_name.split(".")
    parent = model
    for p in parts[:-1]:
        parent = parent[int(p)] if p.isdigit() else getattr(parent, p)
    return parent, parts[-1]


def apply_lora(model: nn.Module, targets: tuple = ATTENTION_TARGETS, rank: int = 4, alpha: float = None) -> nn.Module:
    """
    Freeze every base parameter and wrap each targeted linear layer.
    Afterwards only adapter parameters require gradients.
    """
    for p in model.parameters():
        p.requires_grad = False

    names = [
        name for name, mod in model.named_modules()
        if isinstance(mod, nn.Linear) and name.split(".")[-1] in targets
    ]
    for name in names:
        parent, attr = find_parent_and_attr(model, name)
        base = getattr(parent, attr)
        wrapped = LoRAAdapter(base, target_name=name, rank=rank, alpha=alpha)
        wrapped.to(base.weight.device, base.weight.dtype)
        setattr(parent, attr, wrapped)
    logger.debug(f"[lora] attached {len(names)} adapters (rank {rank})")
    return model


def lora_adapters(model: nn.Module) -> dict:
    """target name -> adapter, in module order."""
    return {m.target_name: m for m in model.modules() if isinstance(m, LoRAAdapter)}


def merge_lora(model: nn.Module) -> nn.Module:
    """Return an adapter-free copy whose weights are W + scale * up @ down."""
    merged = copy.deepcopy(model)
    adapters = [(name, m) for name, m in merged.named_modules() if isinstance(m, LoRAAdapter)]
    for name, adapter in adapters:
        base = adapter.module
        delta = adapter.delta().detach()
        if delta.shape != base.weight.shape:
            raise ValidationError(
                f"adapter {adapter.target_name} delta {tuple(delta.shape)} does not match weight {tuple(base.weight.shape)}"
            )
        fused = nn.Linear(base.in_features, base.out_features, bias=base.bias is not None)
        fused.to(base.weight.device, base.weight.dtype)
        with torch.no_grad():
            fused.weight.copy_(base.weight + delta)
            if base.bias is not None:
                fused.bias.copy_(base.bias)
        fused.requires_grad_(False)
        parent, attr = find_parent_and_attr(merged, name)
        setattr(parent, attr, fused)
    return merged


def adapter_state(model: nn.Module) -> dict:
    """target name -> {'down', 'up', 'scale', 'rank'} for persistence."""
    return {
        name: {"down": a.down.detach().cpu().clone(), "up": a.up.detach().cpu().clone(),
               "scale": a.scale, "rank": a.rank}
        for name, a in lora_adapters(model).items()
    }


def load_adapter_state(model: nn.Module, state: dict):
    adapters = lora_adapters(model)
    missing = sorted(set(adapters) - set(state))
    if missing:
        raise ValidationError(f"no stored weights for adapters {missing}")
    for name, values in state.items():
        if name not in adapters:
            raise ValidationError(f"stored adapter {name} has no target in the model")
        adapter = adapters[name]
        if values["down"].shape != adapter.down.shape or values["up"].shape != adapter.up.shape:
            raise ValidationError(
                f"adapter {name}: stored shapes {tuple(values['down'].shape)}/{tuple(values['up'].shape)} "
                f"incompatible with {tuple(adapter.down.shape)}/{tuple(adapter.up.shape)}"
            )
        with torch.no_grad():
            adapter.down.copy_(values["down"])
            adapter.up.copy_(values["up"])
        adapter.scale = float(values["scale"])


def base_state(model: nn.Module) -> dict:
    """State dict without adapter parameters, keyed by the unwrapped names."""
    state = {}
    for key, value in model.state_dict().items():
        if key.endswith(".down") or key.endswith(".up"):
            continue
        state[key.replace(".module.", ".")] = value
    return state


def base_hash(model: nn.Module) -> str:
    return hash_tensors(base_state(model))


def count_parameters(model: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def count_base_parameters(model: nn.Module) -> int:
    return sum(v.numel() for v in base_state(model).values())
