"""Generator and discriminator objectives with variant switches.

All adversarial terms are computed from logits: -log D = softplus(-l) and
-log(1 - D) = softplus(l). Each term is a batch mean averaged over the
discriminator stages passed in. Caption and QA batches are averaged
separately and then summed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F

from .config import VariantSpec
from .discriminators import DiscriminatorOutput

G_TERMS = ("adv_uncond_caption", "adv_uncond_qa", "adv_cond_caption", "adv_cond_qa",
           "damsm_caption", "damsm_qa", "vqa", "kl")
D_TERMS = ("d_real_uncond", "d_fake_uncond_caption", "d_fake_uncond_qa",
           "d_real_cond", "d_fake_cond_caption", "d_fake_cond_qa")


@dataclass
class LossReport:
    """Named loss terms (already weighted) and their total."""

    terms: dict[str, torch.Tensor] = field(default_factory=dict)
    total_name: str = "total_g"

    @property
    def total(self) -> torch.Tensor:
        values = list(self.terms.values())
        if not values:
            return torch.zeros(())
        return torch.stack([v.reshape(()) for v in values]).sum()

    def scalars(self) -> dict[str, float]:
        out = {k: float(v.detach()) for k, v in self.terms.items()}
        out[self.total_name] = float(self.total.detach())
        return out


def _stage_mean(outputs: Sequence[DiscriminatorOutput], attr: str, sign: float) -> torch.Tensor:
    """Mean over stages of the batch mean of softplus(sign * logit)."""
    per_stage = [F.softplus(sign * getattr(o, attr)).mean() for o in outputs]
    return torch.stack(per_stage).mean()


def _present(outputs: Sequence[DiscriminatorOutput] | None) -> bool:
    return bool(outputs) and outputs[0].uncond_logit.numel() > 0


def _require(value, what: str, variant: VariantSpec):
    if value is None:
        raise ValueError(f"variant {variant.name} requires {what}")
    return value


def generator_loss(fake_caption: Sequence[DiscriminatorOutput],
                   fake_qa: Sequence[DiscriminatorOutput] | None,
                   variant: VariantSpec,
                   damsm_caption: torch.Tensor | None = None,
                   damsm_qa: torch.Tensor | None = None,
                   vqa: torch.Tensor | None = None,
                   kl: torch.Tensor | None = None,
                   lambda_damsm: float = 1.0, lambda_vqa: float = 1.0, kl_weight: float = 0.0,
                   damsm_on_qa: bool | None = None) -> LossReport:
    """Adversarial (uncond + cond, caption + QA), weighted DAMSM, VQA and KL terms.

    QA adversarial terms are included only when the variant lets the
    discriminator see QA images; an empty QA batch contributes nothing.
    """
    if damsm_on_qa is None:
        damsm_on_qa = variant.name == "adapted"
    terms = {
        "adv_uncond_caption": _stage_mean(fake_caption, "uncond_logit", -1.0),
        "adv_cond_caption": _stage_mean(fake_caption, "cond_logit", -1.0),
    }
    if variant.discriminator_sees_qa:
        _require(fake_qa, "discriminator outputs for QA images", variant)
        if _present(fake_qa):
            terms["adv_uncond_qa"] = _stage_mean(fake_qa, "uncond_logit", -1.0)
            terms["adv_cond_qa"] = _stage_mean(fake_qa, "cond_logit", -1.0)
    if damsm_caption is not None:
        terms["damsm_caption"] = lambda_damsm * damsm_caption
    if damsm_on_qa and variant.uses_qa and damsm_qa is not None:
        terms["damsm_qa"] = lambda_damsm * damsm_qa
    if variant.vqa_loss_enabled:
        vqa = _require(vqa, "the VQA loss", variant)
        terms["vqa"] = lambda_vqa * vqa
    if kl is not None and kl_weight:
        terms["kl"] = kl_weight * kl
    return LossReport({k: terms[k] for k in G_TERMS if k in terms}, "total_g")


def discriminator_loss(real: Sequence[DiscriminatorOutput],
                       fake_caption: Sequence[DiscriminatorOutput],
                       fake_qa: Sequence[DiscriminatorOutput] | None,
                       variant: VariantSpec) -> LossReport:
    """Real/fake terms, unconditional and conditional; QA fakes only for variants that use them."""
    terms = {
        "d_real_uncond": _stage_mean(real, "uncond_logit", -1.0),
        "d_fake_uncond_caption": _stage_mean(fake_caption, "uncond_logit", 1.0),
        "d_real_cond": _stage_mean(real, "cond_logit", -1.0),
        "d_fake_cond_caption": _stage_mean(fake_caption, "cond_logit", 1.0),
    }
    if variant.discriminator_sees_qa:
        _require(fake_qa, "discriminator outputs for QA images", variant)
        if _present(fake_qa):
            terms["d_fake_uncond_qa"] = _stage_mean(fake_qa, "uncond_logit", 1.0)
            terms["d_fake_cond_qa"] = _stage_mean(fake_qa, "cond_logit", 1.0)
    return LossReport({k: terms[k] for k in D_TERMS if k in terms}, "total_d")


def discriminator_accuracy(real: Sequence[DiscriminatorOutput], fake: Sequence[DiscriminatorOutput]) -> float:
    """Balanced real/fake accuracy of the unconditional heads, averaged over stages."""
    accs = []
    for r, f in zip(real, fake):
        accs.append(0.5 * ((r.uncond_logit > 0).float().mean() + (f.uncond_logit < 0).float().mean()))
    return float(torch.stack(accs).mean())
