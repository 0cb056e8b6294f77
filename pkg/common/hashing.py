"""
Content hashes for files, weights and configs.
"""

import hashlib
import json

import numpy as np
import torch


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def hash_config(config: dict) -> str:
    """Hash of the canonical JSON form (sorted keys, no whitespace)."""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return sha256_bytes(canonical.encode('utf-8'))


def hash_tensors(tensors: dict) -> str:
    """
    Hash a name -> tensor mapping by names, shapes, dtypes and raw bytes.
    Two mappings hash equal iff they are bit-identical.
    """
    digest = hashlib.sha256()
    for name in sorted(tensors):
        value = tensors[name]
        if isinstance(value, torch.Tensor):
            array = value.detach().cpu().contiguous().numpy()
        else:
            array = np.ascontiguousarray(value)
        digest.update(name.encode('utf-8'))
        digest.update(str(array.shape).encode('utf-8'))
        digest.update(str(array.dtype).encode('utf-8'))
        digest.update(array.tobytes())
    return digest.hexdigest()


def architecture_hash(module: torch.nn.Module, extra: dict = None) -> str:
    """Hash of parameter names and shapes plus optional constructor arguments."""
    layout = {name: list(p.shape) for name, p in module.state_dict().items()}
    return hash_config({"layout": layout, "extra": extra or {}})
