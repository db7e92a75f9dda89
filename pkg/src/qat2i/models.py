"""Build the networks from a run configuration."""

from __future__ import annotations

import os
from pathlib import Path

import torch
import torch.nn.functional as F

from .config import Config
from .damsm import ImageEncoder
from .discriminators import Discriminators
from .generator import Generator, GeneratorConfig
from .text_encoder import TextEncoder, TextEncoderConfig
from .vqa import VQAConfig, VQAModel

OUTPUT_ROOT_ENV = "QAT2I_OUTPUT_ROOT"


def resolve_path(path: str | Path) -> Path:
    path = Path(path)
    if path.is_absolute():
        return path
    return Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / path


def text_encoder_config(cfg: Config, vocab_size: int) -> TextEncoderConfig:
    return TextEncoderConfig(vocab_size, cfg.embedding_dim, cfg.hidden_dim, cfg.text_dropout, cfg.rnn_cell)


def build_text_encoder(cfg: Config, vocab_size: int) -> TextEncoder:
    return TextEncoder(text_encoder_config(cfg, vocab_size))


def build_image_encoder(cfg: Config) -> ImageEncoder:
    return ImageEncoder(2 * cfg.hidden_dim, cfg.final_resolution, cfg.damsm_channels)


def generator_config(cfg: Config) -> GeneratorConfig:
    return GeneratorConfig(2 * cfg.hidden_dim, cfg.noise_dim, cfg.condition_dim, cfg.gf_dim,
                           cfg.stage_count, cfg.base_resolution, cfg.residual_blocks)


def build_generator(cfg: Config) -> Generator:
    return Generator(generator_config(cfg))


def build_discriminators(cfg: Config) -> Discriminators:
    return Discriminators(generator_config(cfg).resolutions, 2 * cfg.hidden_dim, cfg.df_dim)


def vqa_config(cfg: Config, vocab_size: int, n_answers: int, n_classes: int) -> VQAConfig:
    return VQAConfig(vocab_size, n_answers, n_classes, cfg.vqa_image_size, cfg.vqa_channels,
                     cfg.vqa_embedding_dim, cfg.vqa_hidden_dim, cfg.vqa_attention_dim, cfg.vqa_glimpses)


def build_vqa(cfg: Config, vocab_size: int, n_answers: int, n_classes: int) -> VQAModel:
    return VQAModel(vqa_config(cfg, vocab_size, n_answers, n_classes))


def image_pyramid(images: torch.Tensor, resolutions: list[int]) -> list[torch.Tensor]:
    """Area-downsampled copies of ``images`` at each resolution."""
    return [images if images.shape[-1] == r else F.interpolate(images, size=(r, r), mode="area")
            for r in resolutions]


def resize(images: torch.Tensor, size: int) -> torch.Tensor:
    if images.shape[-1] == size:
        return images
    mode = "area" if images.shape[-1] > size else "bilinear"
    return F.interpolate(images, size=(size, size), mode=mode)
