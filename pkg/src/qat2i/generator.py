"""Multi-stage attentional generator.

A first stage maps (noise, conditioning latent) to a low-resolution feature
map; each refinement stage attends over the word features at every spatial
location, mixes the attended context into the hidden map and doubles the
resolution. Every stage emits an RGB image through a tanh head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class GeneratorConfig:
    text_dim: int
    noise_dim: int = 100
    condition_dim: int = 64
    gf_dim: int = 16
    stage_count: int = 3
    base_resolution: int = 16
    residual_blocks: int = 1

    def __post_init__(self):
        if self.stage_count not in (1, 2, 3):
            raise ValueError("stage_count must be 1, 2 or 3")
        if self.base_resolution < 4 or self.base_resolution & (self.base_resolution - 1):
            raise ValueError("base_resolution must be a power of two >= 4")

    @property
    def resolutions(self) -> list[int]:
        return [self.base_resolution * 2 ** i for i in range(self.stage_count)]


@dataclass
class ConditioningLatent:
    mean: torch.Tensor
    log_variance: torch.Tensor
    sample: torch.Tensor

    @property
    def kl(self) -> torch.Tensor:
        """Per-sample KL(N(mean, exp(log_variance)) || N(0, I))."""
        return 0.5 * (self.log_variance.exp() + self.mean.pow(2) - 1 - self.log_variance).sum(-1)


@dataclass
class ImagePyramid:
    images: list[torch.Tensor]
    attention: list[torch.Tensor] = field(default_factory=list)  # B x T x H x W per refinement stage
    latent: ConditioningLatent | None = None

    @property
    def final(self) -> torch.Tensor:
        return self.images[-1]


def word_attention(hidden: torch.Tensor, source: torch.Tensor,
                   mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Attend from every location of ``hidden`` (B x C x H x W) over words.

    ``source`` holds projected word features (B x C x T); ``mask`` is True at
    padding. Returns the context map (B x C x H x W) and weights (B x T x H x W).
    """
    B, C, H, W = hidden.shape
    query = hidden.reshape(B, C, H * W)
    scores = torch.bmm(query.transpose(1, 2), source)  # B x HW x T
    if mask is not None:
        if mask.all(dim=1).any():
            raise ValueError("word attention over a fully masked sequence")
        scores = scores.masked_fill(mask[:, None, :], float("-inf"))
    attn = F.softmax(scores, dim=-1)
    context = torch.bmm(source, attn.transpose(1, 2))  # B x C x HW
    return context.reshape(B, C, H, W), attn.transpose(1, 2).reshape(B, -1, H, W)


class ConditioningAugmentation(nn.Module):
    def __init__(self, text_dim: int, condition_dim: int):
        super().__init__()
        self.condition_dim = condition_dim
        self.fc = nn.Linear(text_dim, condition_dim * 4)

    def forward(self, sentence: torch.Tensor, eps: torch.Tensor | None = None,
                generator: torch.Generator | None = None) -> ConditioningLatent:
        if not torch.isfinite(sentence).all():
            raise ValueError("non-finite sentence embedding")
        x = F.glu(self.fc(sentence), dim=-1)
        mean, log_var = x[:, :self.condition_dim], x[:, self.condition_dim:]
        if eps is None:
            eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        return ConditioningLatent(mean, log_var, mean + torch.exp(0.5 * log_var) * eps)


def up_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode="nearest"),
        nn.Conv2d(in_ch, out_ch * 2, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch * 2),
        nn.GLU(dim=1),
    )


class ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch * 2, 3, padding=1, bias=False), nn.BatchNorm2d(ch * 2), nn.GLU(dim=1),
            nn.Conv2d(ch, ch, 3, padding=1, bias=False), nn.BatchNorm2d(ch),
        )

    def forward(self, x):
        return x + self.body(x)


class InitStage(nn.Module):
    def __init__(self, in_dim: int, gf_dim: int, resolution: int):
        super().__init__()
        n_up = (resolution // 4).bit_length() - 1
        self.ch0 = gf_dim * 2 ** n_up
        self.fc = nn.Linear(in_dim, self.ch0 * 2 * 16, bias=False)
        self.bn = nn.BatchNorm2d(self.ch0 * 2)
        self.ups = nn.Sequential(*[up_block(self.ch0 // 2 ** i, self.ch0 // 2 ** (i + 1)) for i in range(n_up)])

    def forward(self, x):
        h = self.fc(x).reshape(x.shape[0], self.ch0 * 2, 4, 4)
        return self.ups(F.glu(self.bn(h), dim=1))


class RefineStage(nn.Module):
    def __init__(self, gf_dim: int, text_dim: int, residual_blocks: int):
        super().__init__()
        self.project = nn.Conv1d(text_dim, gf_dim, 1, bias=False)
        self.res = nn.Sequential(*[ResBlock(gf_dim * 2) for _ in range(residual_blocks)])
        self.up = up_block(gf_dim * 2, gf_dim)

    def forward(self, h, words, mask):
        context, attn = word_attention(h, self.project(words), mask)
        return self.up(self.res(torch.cat([h, context], dim=1))), attn


class ImageHead(nn.Module):
    def __init__(self, gf_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(gf_dim, 3, 3, padding=1)

    def forward(self, h):
        return torch.tanh(self.conv(h))


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c = config
        self.ca = ConditioningAugmentation(c.text_dim, c.condition_dim)
        self.init_stage = InitStage(c.noise_dim + c.condition_dim, c.gf_dim, c.base_resolution)
        self.refine = nn.ModuleList(RefineStage(c.gf_dim, c.text_dim, c.residual_blocks)
                                    for _ in range(c.stage_count - 1))
        self.heads = nn.ModuleList(ImageHead(c.gf_dim) for _ in range(c.stage_count))

    def forward(self, noise: torch.Tensor, sentence: torch.Tensor, words: torch.Tensor,
                mask: torch.Tensor | None = None, eps: torch.Tensor | None = None,
                generator: torch.Generator | None = None) -> ImagePyramid:
        c = self.config
        if noise.shape[-1] != c.noise_dim or sentence.shape[-1] != c.text_dim or words.shape[1] != c.text_dim:
            raise ValueError(f"generator expects noise dim {c.noise_dim} and text dim {c.text_dim}, got "
                             f"{noise.shape[-1]}, {sentence.shape[-1]} and {words.shape[1]}")
        if not (noise.shape[0] == sentence.shape[0] == words.shape[0]):
            raise ValueError("noise, sentence and word batches differ in size")
        latent = self.ca(sentence, eps=eps, generator=generator)
        h = self.init_stage(torch.cat([latent.sample, noise], dim=1))
        images, attention = [self.heads[0](h)], []
        for stage, head in zip(self.refine, self.heads[1:]):
            h, attn = stage(h, words, mask)
            images.append(head(h))
            attention.append(attn)
        return ImagePyramid(images, attention, latent)
