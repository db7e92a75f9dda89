"""Word/region image-text matching model and its contrastive loss.

Scores follow the standard deep attentional multimodal similarity model: word-region
similarities are normalised over words, sharpened by ``gamma1`` and
normalised over regions to give each word an attended region context; word
relevances (cosines) are pooled with a ``gamma2`` log-sum-exp, and
``gamma3`` scales the scores inside the batch softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class RegionFeatures:
    regions: torch.Tensor   # B x D x R
    global_: torch.Tensor   # B x D


def _conv(in_ch, out_ch, k, s, p):
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, k, s, p, padding_mode="replicate"), nn.LeakyReLU(0.2))


class ImageEncoder(nn.Module):
    """Small conv encoder: an 8x8 grid of region features plus a global vector."""

    def __init__(self, feature_dim: int, resolution: int = 64, channels: int = 32, region_grid: int = 8):
        super().__init__()
        if resolution < region_grid * 2:
            raise ValueError("resolution too small for the region grid")
        self.resolution = resolution
        n_down = (resolution // region_grid).bit_length() - 1
        layers, ch = [], 3
        for i in range(n_down):
            nxt = channels * 2 if i == n_down - 1 else channels
            layers.append(_conv(ch, nxt, 4, 2, 1))
            ch = nxt
        self.trunk = nn.Sequential(*layers)
        self.region_proj = nn.Conv2d(ch, feature_dim, 1)
        self.global_trunk = _conv(ch, ch * 2, 4, 2, 1)
        self.global_proj = nn.Linear(ch * 2, feature_dim)

    def forward(self, image: torch.Tensor) -> RegionFeatures:
        if image.shape[-2:] != (self.resolution, self.resolution):
            raise ValueError(f"image encoder expects {self.resolution}x{self.resolution} images, "
                             f"got {image.shape[-2]}x{image.shape[-1]}")
        feat = self.trunk(image)
        regions = self.region_proj(feat).flatten(2)
        global_ = self.global_proj(self.global_trunk(feat).mean(dim=(2, 3)))
        return RegionFeatures(regions, global_)

    encode_image_regions = forward


def pairwise_scores(regions: torch.Tensor, words: torch.Tensor, mask: torch.Tensor | None,
                    gamma1: float, gamma2: float) -> torch.Tensor:
    """Matching scores for every (text i, image j) pair, shape B_text x B_image.

    ``regions`` is B_image x D x R, ``words`` B_text x D x T, ``mask`` True at padding.
    """
    s = torch.einsum("idt,jdr->ijtr", words, regions)
    if mask is not None:
        if mask.all(dim=1).any():
            raise ValueError("matching score over a fully masked sequence")
        m = mask[:, None, :, None]
        s = s.masked_fill(m, float("-inf"))
    s = F.softmax(s, dim=2)                    # normalise over words per region
    alpha = F.softmax(gamma1 * s, dim=3)       # attend over regions per word
    context = torch.einsum("ijtr,jdr->ijdt", alpha, regions)
    rel = F.cosine_similarity(context, words[:, None], dim=2, eps=1e-8)  # i x j x T
    rel = gamma2 * rel
    if mask is not None:
        rel = rel.masked_fill(mask[:, None, :], float("-inf"))
    return torch.logsumexp(rel, dim=2) / gamma2


def matching_score(regions: torch.Tensor, words: torch.Tensor, gamma1: float = 4.0, gamma2: float = 5.0,
                   mask: torch.Tensor | None = None) -> torch.Tensor:
    """Score of one image (D x R) against one text (D x T)."""
    m = None if mask is None else mask[None]
    return pairwise_scores(regions[None], words[None], m, gamma1, gamma2)[0, 0]


def _bidirectional_ce(logits: torch.Tensor, same: torch.Tensor | None) -> tuple[torch.Tensor, torch.Tensor]:
    if same is not None:
        off_diag = same & ~torch.eye(len(logits), dtype=torch.bool)
        logits = logits.masked_fill(off_diag, float("-inf"))
    labels = torch.arange(len(logits))
    return F.cross_entropy(logits, labels), F.cross_entropy(logits.t(), labels)


def damsm_loss(image: RegionFeatures, words: torch.Tensor, sentence: torch.Tensor,
               mask: torch.Tensor | None = None, gamma1: float = 4.0, gamma2: float = 5.0,
               gamma3: float = 10.0, same: torch.Tensor | None = None) -> tuple[torch.Tensor, dict]:
    """Word-level plus sentence-level contrastive matching loss (4 CE terms, batch means).

    ``same`` (B x B, optional) marks pairs of identical texts; such off-diagonal
    pairs are excluded from the softmax denominators.
    """
    n = words.shape[0]
    if n < 2:
        raise ValueError("contrastive loss undefined for batch size 1")
    word_logits = gamma3 * pairwise_scores(image.regions, words, mask, gamma1, gamma2)
    sent_logits = gamma3 * F.cosine_similarity(sentence[:, None], image.global_[None], dim=2, eps=1e-8)
    w_t2i, w_i2t = _bidirectional_ce(word_logits, same)
    s_t2i, s_i2t = _bidirectional_ce(sent_logits, same)
    parts = {"word_t2i": w_t2i, "word_i2t": w_i2t, "sent_t2i": s_t2i, "sent_i2t": s_i2t}
    return w_t2i + w_i2t + s_t2i + s_i2t, parts


def loss_from_logits(word_logits: torch.Tensor, sent_logits: torch.Tensor) -> torch.Tensor:
    """The four-term loss given precomputed (already gamma3-scaled) score matrices."""
    a, b = _bidirectional_ce(word_logits, None)
    c, d = _bidirectional_ce(sent_logits, None)
    return a + b + c + d
