"""Versioned checkpoint files with config headers and parameter digests."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import torch

from .utils import state_digest

FORMAT = "qat2i-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class CheckpointMeta:
    epoch: int
    step: int
    is_mean: float | None = None
    config_hash: str = ""
    digests: dict[str, str] = field(default_factory=dict)
    path: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def save_checkpoint(path: str | Path, kind: str, states: dict[str, dict], header: dict[str, Any],
                    extra: dict[str, Any] | None = None) -> dict[str, str]:
    """Write ``states`` (name -> state dict) atomically; returns per-state digests."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digests = {name: state_digest(sd) for name, sd in states.items() if _is_tensor_state(sd)}
    blob = {"format": FORMAT, "version": VERSION, "kind": kind, "header": header,
            "states": states, "digests": digests, "extra": extra or {}}
    tmp = path.with_name(path.name + ".tmp")
    torch.save(blob, tmp)
    os.replace(tmp, path)
    return digests


def _is_tensor_state(sd) -> bool:
    return isinstance(sd, dict) and all(isinstance(v, torch.Tensor) for v in sd.values())


def load_checkpoint(path: str | Path, kind: str | None = None, vocab_hash: str | None = None,
                    answer_hash: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if blob["version"] > VERSION:
        raise CheckpointError(f"{path} has format version {blob['version']}, newer than supported {VERSION}")
    if kind is not None and blob["kind"] != kind:
        raise CheckpointError(f"{path} holds a {blob['kind']} checkpoint, expected {kind}")
    header = blob["header"]
    if vocab_hash is not None and header.get("vocab_hash") != vocab_hash:
        raise CheckpointError(f"{path}: vocabulary hash mismatch (checkpoint {header.get('vocab_hash')}, "
                              f"dataset {vocab_hash})")
    if answer_hash is not None and header.get("answer_hash") != answer_hash:
        raise CheckpointError(f"{path}: answer vocabulary hash mismatch")
    for name, digest in blob["digests"].items():
        if state_digest(blob["states"][name]) != digest:
            raise CheckpointError(f"{path}: digest mismatch for {name}")
    return blob
