"""Run configuration: one flat set of keys, two presets, file + override loading."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .utils import json_digest

VARIANTS = ("baseline", "naive_end_to_end", "naive_pretrained", "adapted")


@dataclass(frozen=True)
class VariantSpec:
    name: str
    discriminator_sees_qa: bool
    vqa_model_trainable: bool
    vqa_loss_enabled: bool

    @classmethod
    def named(cls, name: str) -> "VariantSpec":
        table = {
            "baseline": (False, False, False),
            "naive_end_to_end": (False, True, True),
            "naive_pretrained": (False, False, True),
            "adapted": (True, False, True),
        }
        if name not in table:
            raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
        return cls(name, *table[name])

    @property
    def uses_qa(self) -> bool:
        return self.discriminator_sees_qa or self.vqa_loss_enabled

    @property
    def needs_pretrained_vqa(self) -> bool:
        return self.vqa_loss_enabled and not self.vqa_model_trainable


def _k(default, help: str, **kw):
    return field(default=default, metadata={"help": help}, **kw)


@dataclass
class Config:
    preset: str = _k("desk", "desk | full; selects default sizes")
    dataset: str = _k("data/synth", "prepared dataset directory")
    output: str = _k("runs/default", "run directory (relative paths resolve under $QAT2I_OUTPUT_ROOT)")
    seed: int = _k(0, "root seed; every random stream derives from it")
    variant: str = _k("adapted", "baseline | naive_end_to_end | naive_pretrained | adapted")
    damsm_checkpoint: str = _k("pretrained/damsm.pt", "DAMSM (text + image encoder) checkpoint path")
    vqa_checkpoint: str = _k("pretrained/vqa.pt", "pretrained VQA checkpoint path")

    # data
    n_images: int = _k(200, "synth-data: number of scenes")
    canvas_size: int = _k(64, "synthetic canvas size and image load resolution")
    max_shapes: int = _k(1, "synth-data: maximum shapes per scene")
    test_fraction: float = _k(0.5, "synth-data: fraction of scenes held out as the test split")
    min_frequency: int = _k(1, "vocabulary frequency threshold (5 for real data)")
    qa_ratio: float = _k(1.0, "QA samples per caption sample in each training batch")
    pretrain_with_qa: bool = _k(True, "include QA texts when pretraining the text encoder")

    # text encoder
    embedding_dim: int = _k(64, "word embedding size")
    hidden_dim: int = _k(64, "recurrent hidden size per direction (feature dim = 2x)")
    rnn_cell: str = _k("lstm", "lstm | gru")
    text_dropout: float = _k(0.0, "dropout on word embeddings during pretraining")

    # generator / discriminators
    noise_dim: int = _k(100, "generator noise size")
    condition_dim: int = _k(64, "conditioning-augmentation latent size")
    gf_dim: int = _k(8, "generator channel width at the finest stage")
    stage_count: int = _k(3, "number of generator stages (1-3)")
    base_resolution: int = _k(16, "first-stage image resolution")
    residual_blocks: int = _k(1, "residual blocks per refinement stage")
    df_dim: int = _k(16, "discriminator base channel width")

    # DAMSM
    gamma1: float = _k(4.0, "word-region attention sharpness")
    gamma2: float = _k(5.0, "word aggregation smoothing")
    gamma3: float = _k(10.0, "matching score scale in the contrastive softmax")
    damsm_channels: int = _k(32, "DAMSM image encoder width")
    damsm_epochs: int = _k(15, "DAMSM pretraining epochs")
    damsm_lr: float = _k(2e-3, "DAMSM pretraining learning rate")

    # VQA
    vqa_channels: int = _k(32, "VQA image tower width")
    vqa_embedding_dim: int = _k(64, "VQA question word embedding size")
    vqa_hidden_dim: int = _k(64, "VQA question encoder hidden size")
    vqa_attention_dim: int = _k(64, "stacked attention hidden size")
    vqa_glimpses: int = _k(2, "stacked attention layers")
    vqa_image_size: int = _k(64, "VQA input resolution")
    max_answers: int = _k(3000, "answer vocabulary cap (top-N training answers)")
    vqa_epochs: int = _k(15, "VQA pretraining epochs")
    vqa_lr: float = _k(1e-3, "VQA pretraining learning rate")

    # objectives
    lambda_damsm: float = _k(5.0, "weight of each DAMSM term in the generator loss")
    lambda_vqa: float = _k(1.0, "weight of the VQA loss in the generator loss")
    kl_weight: float = _k(1.0, "weight of the conditioning-augmentation KL term")
    strict_eq2: bool = _k(False, "unweighted generator loss: lambda_damsm=1, kl_weight=0")
    damsm_on_qa: str = _k("auto", "auto | true | false; DAMSM on QA images (auto: adapted only)")
    stages_in_loss: str = _k("all", "all | final; discriminator stages entering the losses")

    # training
    epochs: int = _k(20, "GAN training epochs")
    batch_size: int = _k(16, "caption batch size")
    lr_g: float = _k(2e-4, "generator learning rate")
    lr_d: float = _k(2e-4, "discriminator learning rate")
    lr_vqa: float = _k(2e-4, "VQA learning rate in the end-to-end variant")
    beta1: float = _k(0.5, "Adam beta1")
    beta2: float = _k(0.999, "Adam beta2")
    checkpoint_every: int = _k(5, "epochs between checkpoints")
    eval_every: int = _k(5, "epochs between checkpoint evaluations (0: never)")
    warmup_epochs: int = _k(5, "epochs excluded from discriminator-accuracy summaries")

    # evaluation
    eval_samples: int = _k(256, "generated images per evaluation (30000 in full preset)")
    is_splits: int = _k(10, "inception score splits")
    r_distractors: int = _k(99, "R-precision mismatched captions per image")
    eval_batch: int = _k(64, "evaluation batch size")
    inception_weights: str = _k("", "full preset: path to inception-v3 weights for IS/FID")
    threads: int = _k(1, "torch CPU threads")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        VariantSpec.named(self.variant)
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.damsm_epochs < 0 or self.vqa_epochs < 0:
            raise ValueError("pretraining epochs must be >= 0")
        for name in ("lr_g", "lr_d", "lr_vqa", "damsm_lr", "vqa_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.stage_count not in (1, 2, 3):
            raise ValueError("stage_count must be 1, 2 or 3")
        if self.rnn_cell not in ("lstm", "gru"):
            raise ValueError("rnn_cell must be lstm or gru")
        if self.damsm_on_qa not in ("auto", "true", "false"):
            raise ValueError("damsm_on_qa must be auto, true or false")
        if self.stages_in_loss not in ("all", "final"):
            raise ValueError("stages_in_loss must be all or final")

    @property
    def variant_spec(self) -> VariantSpec:
        return VariantSpec.named(self.variant)

    @property
    def final_resolution(self) -> int:
        return self.base_resolution * 2 ** (self.stage_count - 1)

    @property
    def use_damsm_on_qa(self) -> bool:
        if self.damsm_on_qa == "auto":
            return self.variant == "adapted"
        return self.damsm_on_qa == "true"

    @property
    def effective_lambda_damsm(self) -> float:
        return 1.0 if self.strict_eq2 else self.lambda_damsm

    @property
    def effective_kl_weight(self) -> float:
        return 0.0 if self.strict_eq2 else self.kl_weight

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        return json_digest(self.to_dict())

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)


PRESETS: dict[str, dict[str, Any]] = {
    "desk": {},
    "full": {
        "min_frequency": 5, "embedding_dim": 300, "hidden_dim": 128, "condition_dim": 100,
        "gf_dim": 32, "df_dim": 64, "base_resolution": 64, "canvas_size": 256,
        "damsm_channels": 128, "vqa_channels": 256, "vqa_embedding_dim": 300,
        "vqa_hidden_dim": 1024, "vqa_attention_dim": 512, "vqa_image_size": 224,
        "residual_blocks": 2, "epochs": 120, "batch_size": 14, "eval_samples": 30000,
        "damsm_epochs": 200, "vqa_epochs": 50, "text_dropout": 0.5,
    },
}

FIELD_NAMES = tuple(f.name for f in fields(Config))


def _coerce(name: str, value: Any) -> Any:
    ftype = {f.name: f.type for f in fields(Config)}[name]
    if isinstance(value, str) and ftype != "str":
        value = yaml.safe_load(value)
    try:
        if ftype == "bool":
            if isinstance(value, str):
                raise TypeError
            return bool(value)
        if ftype == "int":
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if ftype == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ValueError(f"config key {name!r} expects {ftype}, got {value!r}") from None


def parse_overrides(items: list[str]) -> dict[str, Any]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in FIELD_NAMES:
            raise ValueError(f"unknown config key {key!r}")
        out[key] = value
    return out


def resolve_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> Config:
    """Preset defaults, then the config file, then overrides."""
    values: dict[str, Any] = {}
    if path:
        loaded = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {path} must hold a mapping")
        for key in loaded:
            if key not in FIELD_NAMES:
                raise ValueError(f"unknown config key {key!r}")
        values.update(loaded)
    values.update(overrides or {})
    preset = values.get("preset", "desk")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    merged = {**PRESETS[preset], **values}
    return Config(**{k: _coerce(k, v) for k, v in merged.items()})


def describe_keys() -> str:
    default = Config()
    lines = []
    for f in fields(Config):
        lines.append(f"  {f.name:<18} {f.metadata['help']} (default: {getattr(default, f.name)!r})")
    return "\n".join(lines)
