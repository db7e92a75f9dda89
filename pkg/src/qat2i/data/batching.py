"""Padded text batches and the paired caption/QA batch stream."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import torch

from ..utils import numpy_rng
from .records import CaptionRecord, QARecord


@dataclass
class TextBatch:
    tokens: torch.Tensor   # B x T, pad id 0
    lengths: torch.Tensor  # B

    @classmethod
    def from_sequences(cls, seqs: Sequence[Sequence[int]], pad_id: int = 0) -> "TextBatch":
        if not seqs or any(len(s) == 0 for s in seqs):
            raise ValueError("text batch needs non-empty sequences")
        width = max(len(s) for s in seqs)
        tokens = torch.full((len(seqs), width), pad_id, dtype=torch.long)
        for i, s in enumerate(seqs):
            tokens[i, :len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        return cls(tokens, torch.tensor([len(s) for s in seqs], dtype=torch.long))

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def mask(self) -> torch.Tensor:
        """True at padding positions."""
        t = torch.arange(self.tokens.shape[1])
        return t[None, :] >= self.lengths[:, None]

    def same_text(self) -> torch.Tensor:
        """B x B boolean, True where two rows hold identical sequences."""
        eq = (self.tokens[:, None, :] == self.tokens[None, :, :]).all(-1)
        return eq & (self.lengths[:, None] == self.lengths[None, :])


@dataclass
class PairedBatch:
    caption: TextBatch
    caption_records: list[CaptionRecord]
    qa: TextBatch
    question: TextBatch
    qa_records: list[QARecord]
    caption_images: torch.Tensor | None = None
    qa_images: torch.Tensor | None = None


def _sorted_by_length(records: list, key) -> list:
    return sorted(records, key=lambda r: -len(key(r)))


def epoch_steps(n_records: int, batch_size: int) -> int:
    return -(-n_records // batch_size)


def make_batches(captions: Sequence[CaptionRecord], qa_records: Sequence[QARecord],
                 batch_size: int, seed: int, epoch: int = 0, qa_ratio: float = 1.0,
                 images: torch.Tensor | None = None,
                 image_index: dict[str, int] | None = None) -> Iterator[PairedBatch]:
    """One epoch over the captions, each step paired with a QA batch.

    Caption order is a seeded permutation per epoch; QA records are drawn
    from their own seeded permutation, cycling as needed. Within a batch the
    sequences are sorted by decreasing length. The final batch may be short.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > len(captions):
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {len(captions)}")
    rng = numpy_rng(seed, f"batches/epoch{epoch}")
    cap_order = rng.permutation(len(captions))
    qa_order = rng.permutation(len(qa_records)) if qa_records else []
    qa_pos = 0
    for start in range(0, len(captions), batch_size):
        caps = [captions[i] for i in cap_order[start:start + batch_size]]
        caps = _sorted_by_length(caps, lambda r: r.token_ids)
        n_qa = max(1, int(round(qa_ratio * len(caps)))) if len(qa_order) else 0
        qas = []
        for _ in range(n_qa):
            if qa_pos == len(qa_order):
                qa_order, qa_pos = rng.permutation(len(qa_records)), 0
            qas.append(qa_records[qa_order[qa_pos]])
            qa_pos += 1
        qas = _sorted_by_length(qas, lambda r: r.qa_token_ids)
        batch = PairedBatch(
            caption=TextBatch.from_sequences([r.token_ids for r in caps]),
            caption_records=caps,
            qa=TextBatch.from_sequences([r.qa_token_ids for r in qas]) if qas else None,
            question=TextBatch.from_sequences([r.question_token_ids for r in qas]) if qas else None,
            qa_records=qas,
        )
        if images is not None:
            batch.caption_images = images[[image_index[r.image_id] for r in caps]]
            if qas:
                batch.qa_images = images[[image_index[r.image_id] for r in qas]]
        yield batch
