"""Per-stage discriminators with unconditional and text-conditional heads."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class DiscriminatorOutput:
    uncond_logit: torch.Tensor
    cond_logit: torch.Tensor | None = None

    @property
    def uncond_prob(self) -> torch.Tensor:
        return torch.sigmoid(self.uncond_logit)

    @property
    def cond_prob(self) -> torch.Tensor | None:
        return None if self.cond_logit is None else torch.sigmoid(self.cond_logit)


def _down(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(in_ch, out_ch, 4, 2, 1), nn.LeakyReLU(0.2, inplace=True))


class StageDiscriminator(nn.Module):
    """Downsamples to 4x4, then scores with and without the sentence embedding."""

    def __init__(self, stage: int, resolution: int, text_dim: int, df_dim: int = 16):
        super().__init__()
        self.stage, self.resolution = stage, resolution
        n_down = (resolution // 4).bit_length() - 1
        chans = [3] + [df_dim * 2 ** min(i, 3) for i in range(n_down)]
        self.encoder = nn.Sequential(*[_down(a, b) for a, b in zip(chans[:-1], chans[1:])])
        feat = chans[-1]
        self.uncond_head = nn.Conv2d(feat, 1, 4)
        self.joint = nn.Sequential(nn.Conv2d(feat + text_dim, feat, 3, padding=1), nn.LeakyReLU(0.2, inplace=True))
        self.cond_head = nn.Conv2d(feat, 1, 4)

    def check_resolution(self, image: torch.Tensor) -> None:
        if image.shape[-2:] != (self.resolution, self.resolution):
            raise ValueError(f"stage {self.stage} discriminator expects {self.resolution}x{self.resolution} "
                             f"images, got {image.shape[-2]}x{image.shape[-1]}")

    def forward(self, image: torch.Tensor, sentence: torch.Tensor | None = None) -> DiscriminatorOutput:
        self.check_resolution(image)
        feat = self.encoder(image)
        uncond = self.uncond_head(feat).flatten()
        cond = None
        if sentence is not None:
            tiled = sentence[:, :, None, None].expand(-1, -1, feat.shape[2], feat.shape[3])
            cond = self.cond_head(self.joint(torch.cat([feat, tiled], dim=1))).flatten()
        return DiscriminatorOutput(uncond, cond)


class Discriminators(nn.ModuleList):
    def __init__(self, resolutions: list[int], text_dim: int, df_dim: int = 16):
        super().__init__(StageDiscriminator(i, r, text_dim, df_dim) for i, r in enumerate(resolutions))
