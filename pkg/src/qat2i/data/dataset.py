"""Loading prepared dataset directories into memory."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .records import CaptionRecord, QARecord, read_manifest, tokenize_records
from .vocab import Vocabulary


@dataclass
class Dataset:
    root: Path
    split: str
    vocab: Vocabulary
    captions: list[CaptionRecord]
    qa: list[QARecord]
    images: torch.Tensor          # N x 3 x H x W in [-1, 1]
    image_ids: list[str]
    labels: torch.Tensor | None   # scene class per image, synthetic data only
    meta: dict

    @property
    def image_index(self) -> dict[str, int]:
        return {iid: i for i, iid in enumerate(self.image_ids)}

    def images_for(self, image_ids) -> torch.Tensor:
        index = self.image_index
        return self.images[[index[i] for i in image_ids]]


def load_image(path: str | Path, size: int) -> torch.Tensor:
    img = Image.open(path).convert("RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BICUBIC)
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def _image_path(root: Path, meta: dict, split: str, image_id: str) -> Path:
    pattern = meta.get("image_patterns", {}).get(split, "images/{image_id}.png")
    # numeric ids format as integers so patterns like {image_id:012d} work
    path = Path(pattern.format(image_id=int(image_id) if image_id.isdigit() else image_id))
    return path if path.is_absolute() else root / path


def read_meta(root: str | Path) -> dict:
    path = Path(root) / "dataset.meta"
    if not path.exists():
        raise FileNotFoundError(f"{root} is not a prepared dataset (missing dataset.meta)")
    return json.loads(path.read_text())


def load_dataset(root: str | Path, split: str = "train", image_size: int = 64) -> Dataset:
    root = Path(root)
    meta = read_meta(root)
    vocab = Vocabulary.load(root / "vocab.json")
    if vocab.hash != meta["vocab_hash"]:
        raise ValueError("vocab.json does not match dataset.meta vocabulary hash")
    captions, qa = read_manifest(root / f"{split}.jsonl")
    tokenize_records(captions, qa, vocab)
    image_ids = sorted({r.image_id for r in captions} | {r.image_id for r in qa})
    images = torch.stack([load_image(_image_path(root, meta, split, i), image_size) for i in image_ids]) \
        if image_ids else torch.zeros(0, 3, image_size, image_size)
    labels = None
    scenes_path = root / "scenes.jsonl"
    if scenes_path.exists():
        label_of = {}
        with open(scenes_path) as fh:
            for line in fh:
                row = json.loads(line)
                label_of[row["image_id"]] = row["label"]
        labels = torch.tensor([label_of[i] for i in image_ids], dtype=torch.long)
    return Dataset(root, split, vocab, captions, qa, images, image_ids, labels, meta)
