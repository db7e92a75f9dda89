"""Stacked-attention VQA model, the averaged answer NLL loss and VQA accuracy."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence

from .utils import json_digest

log = logging.getLogger(__name__)


class AnswerVocabulary:
    """Top-N most frequent training answers, ties broken lexicographically."""

    def __init__(self, answers: Sequence[str]):
        self.answers = list(answers)
        self.answer_to_id = {a: i for i, a in enumerate(self.answers)}
        if len(self.answer_to_id) != len(self.answers):
            raise ValueError("duplicate answers in answer vocabulary")

    @classmethod
    def build(cls, answer_lists: Sequence[Sequence[str]], max_answers: int = 3000) -> "AnswerVocabulary":
        counts = Counter(a.strip().lower() for answers in answer_lists for a in answers)
        ranked = sorted(counts, key=lambda a: (-counts[a], a))
        return cls(ranked[:max_answers])

    def __len__(self):
        return len(self.answers)

    @property
    def hash(self) -> str:
        return json_digest(self.answers)

    def ids(self, answers: Sequence[str]) -> list[int]:
        return [self.answer_to_id[a] for a in (x.strip().lower() for x in answers) if a in self.answer_to_id]

    def targets(self, answer_lists: Sequence[Sequence[str]]) -> torch.Tensor:
        """B x N weights: fraction of in-vocabulary annotations naming each answer."""
        out = torch.zeros(len(answer_lists), len(self))
        for row, answers in enumerate(answer_lists):
            ids = self.ids(answers)
            for i in ids:
                out[row, i] += 1.0 / len(ids)
        return out


@dataclass
class VQAConfig:
    vocab_size: int
    n_answers: int
    n_classes: int = 0
    image_size: int = 64
    channels: int = 32
    embedding_dim: int = 64
    hidden_dim: int = 64
    attention_dim: int = 64
    glimpses: int = 2


@dataclass
class VQAOutput:
    logits: torch.Tensor
    attention: list[torch.Tensor]  # B x R per glimpse

    @property
    def probs(self) -> torch.Tensor:
        return F.softmax(self.logits, dim=-1)

    @property
    def log_probs(self) -> torch.Tensor:
        return F.log_softmax(self.logits, dim=-1)


def _conv(in_ch, out_ch, k, s, p):
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, k, s, p, padding_mode="replicate"), nn.LeakyReLU(0.2))


class ImageTower(nn.Module):
    """Conv feature extractor down to an 8x8 grid."""

    def __init__(self, image_size: int, channels: int):
        super().__init__()
        n_down = (image_size // 8).bit_length() - 1
        layers, ch = [], 3
        for i in range(n_down):
            nxt = channels if i < n_down - 1 else channels * 2
            layers.append(_conv(ch, nxt, 4, 2, 1))
            ch = nxt
        self.net = nn.Sequential(*layers)
        self.out_channels = ch

    def forward(self, x):
        return self.net(x)


class StackedAttention(nn.Module):
    def __init__(self, dim: int, attention_dim: int):
        super().__init__()
        self.image_proj = nn.Linear(dim, attention_dim, bias=False)
        self.query_proj = nn.Linear(dim, attention_dim)
        self.score = nn.Linear(attention_dim, 1)

    def forward(self, regions, query):
        h = torch.tanh(self.image_proj(regions) + self.query_proj(query)[:, None])
        p = F.softmax(self.score(h).squeeze(-1), dim=1)
        return query + torch.bmm(p[:, None], regions).squeeze(1), p


class VQAModel(nn.Module):
    def __init__(self, config: VQAConfig):
        super().__init__()
        c = self.config = config
        self.tower = ImageTower(c.image_size, c.channels)
        self.region_proj = nn.Conv2d(self.tower.out_channels, c.hidden_dim, 1)
        self.embedding = nn.Embedding(c.vocab_size, c.embedding_dim, padding_idx=0)
        self.rnn = nn.LSTM(c.embedding_dim, c.hidden_dim, batch_first=True)
        self.attention = nn.ModuleList(StackedAttention(c.hidden_dim, c.attention_dim) for _ in range(c.glimpses))
        self.classifier = nn.Sequential(nn.Linear(c.hidden_dim, c.hidden_dim), nn.ReLU(),
                                        nn.Linear(c.hidden_dim, c.n_answers))
        # scene-class head over pooled tower features, used for IS/FID scoring
        self.scorer = nn.Linear(self.tower.out_channels, c.n_classes) if c.n_classes else None

    @property
    def feature_dim(self) -> int:
        return self.tower.out_channels

    def _check(self, image):
        s = self.config.image_size
        if image.shape[-2:] != (s, s):
            raise ValueError(f"VQA model expects {s}x{s} images, got {image.shape[-2]}x{image.shape[-1]}")

    def image_features(self, image: torch.Tensor) -> torch.Tensor:
        """Pooled penultimate tower activations (B x C)."""
        self._check(image)
        return self.tower(image).mean(dim=(2, 3))

    def class_logits(self, image: torch.Tensor) -> torch.Tensor:
        if self.scorer is None:
            raise RuntimeError("VQA model was built without a scene-class head")
        return self.scorer(self.image_features(image))

    def encode_question(self, tokens, lengths):
        if (lengths < 1).any():
            raise ValueError("empty question")
        packed = pack_padded_sequence(self.embedding(tokens), lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, (h, _) = self.rnn(packed)
        return h[-1]

    def forward(self, image: torch.Tensor, tokens: torch.Tensor, lengths: torch.Tensor) -> VQAOutput:
        self._check(image)
        regions = self.region_proj(self.tower(image)).flatten(2).transpose(1, 2)  # B x R x H
        u = self.encode_question(tokens, lengths)
        maps = []
        for layer in self.attention:
            u, p = layer(regions, u)
            maps.append(p)
        return VQAOutput(self.classifier(u), maps)

    answer_probs = forward


def vqa_loss(log_probs: torch.Tensor, targets: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Mean over annotations of -log P(answer), averaged over the batch.

    ``targets`` holds per-sample annotation weights summing to 1 (see
    :meth:`AnswerVocabulary.targets`). Rows with no in-vocabulary annotation
    are skipped; the number skipped is returned and logged.
    """
    valid = targets.sum(dim=1) > 0
    skipped = int((~valid).sum())
    if skipped:
        log.warning("skipping %d QA samples with no in-vocabulary answer", skipped)
    if not valid.any():
        return log_probs.sum() * 0.0, skipped
    per_sample = -(targets[valid] * log_probs[valid]).sum(dim=1)
    return per_sample.mean(), skipped


def vqa_loss_from_ids(probs: torch.Tensor, answer_ids: Sequence[int]) -> torch.Tensor:
    """Single-sample form: (1/K) sum_k -log P(a_k) for a probability vector."""
    if len(answer_ids) == 0:
        raise ValueError("no in-vocabulary answers")
    idx = torch.as_tensor(list(answer_ids), dtype=torch.long)
    return -torch.log(probs[idx]).mean()


def vqa_accuracy(predictions: Sequence[str], answer_lists: Sequence[Sequence[str]]) -> tuple[float, float]:
    """(consensus accuracy, top-1-in-answer-set accuracy).

    Consensus per sample is min(#annotators giving the prediction / 3, 1).
    """
    if len(predictions) != len(answer_lists):
        raise ValueError(f"{len(predictions)} predictions for {len(answer_lists)} records")
    if not predictions:
        return 0.0, 0.0
    consensus = any_hit = 0.0
    for pred, answers in zip(predictions, answer_lists):
        pred = pred.strip().lower()
        hits = sum(a.strip().lower() == pred for a in answers)
        consensus += min(hits / 3.0, 1.0)
        any_hit += float(hits > 0)
    return consensus / len(predictions), any_hit / len(predictions)
