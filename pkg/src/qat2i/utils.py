"""Seeding, hashing and small tensor helpers shared across the package."""

from __future__ import annotations

import hashlib
import json
from typing import Any, Iterable, Mapping

import numpy as np
import torch


def derive_seed(seed: int, label: str) -> int:
    """Derive a 63-bit sub-seed from a root seed and a label."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def torch_rng(seed: int, label: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, label))
    return gen


def numpy_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, label))


def tensor_digest(tensor: torch.Tensor) -> str:
    data = tensor.detach().cpu().contiguous()
    h = hashlib.sha256()
    h.update(str(data.dtype).encode())
    h.update(str(tuple(data.shape)).encode())
    h.update(data.numpy().tobytes())
    return h.hexdigest()


def state_digest(state: Mapping[str, torch.Tensor]) -> str:
    """Digest of a module state dict, stable across processes."""
    h = hashlib.sha256()
    for key in sorted(state):
        h.update(key.encode())
        value = state[key]
        if isinstance(value, torch.Tensor):
            h.update(tensor_digest(value).encode())
        else:
            h.update(repr(value).encode())
    return h.hexdigest()


def module_digest(module: torch.nn.Module) -> str:
    return state_digest(module.state_dict())


def json_digest(obj: Any) -> str:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(payload).hexdigest()


def file_digest(paths: Iterable) -> str:
    h = hashlib.sha256()
    for path in sorted(str(p) for p in paths):
        with open(path, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def set_deterministic(threads: int | None = None) -> None:
    torch.use_deterministic_algorithms(True)
    # deterministic mode NaN-fills fresh allocations; costly and unneeded for reproducibility
    torch.utils.deterministic.fill_uninitialized_memory = False
    if threads is not None:
        torch.set_num_threads(threads)


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module
