"""Image-quality and alignment metrics: IS, FID, R-precision, VQA accuracy."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import xlogy

from .data.batching import TextBatch
from .utils import derive_seed, numpy_rng
from .vqa import vqa_accuracy

log = logging.getLogger(__name__)


# -- Inception score ----------------------------------------------------------

def inception_score(class_probs: np.ndarray, splits: int = 10) -> tuple[float, float]:
    """Mean and std over splits of exp(E_x KL(p(y|x) || p(y)))."""
    p = np.asarray(class_probs, dtype=np.float64)
    if p.ndim != 2 or (p < 0).any() or not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("class_probs rows must be probability distributions")
    part = p.shape[0] // splits
    if part < 1:
        raise ValueError(f"{p.shape[0]} samples cannot fill {splits} splits")
    scores = []
    for k in range(splits):
        chunk = p[k * part:(k + 1) * part]
        marginal = chunk.mean(axis=0, keepdims=True)
        kl = (xlogy(chunk, chunk) - xlogy(chunk, marginal)).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


# -- Frechet distance ---------------------------------------------------------

@dataclass
class ActivationSet:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @classmethod
    def from_activations(cls, acts: np.ndarray) -> "ActivationSet":
        acts = np.asarray(acts, dtype=np.float64)
        if acts.ndim != 2 or acts.shape[0] < 2:
            raise ValueError("need an n x d activation matrix with n >= 2")
        if acts.shape[0] < acts.shape[1]:
            log.warning("FID statistics from %d samples of dimension %d are rank deficient", *acts.shape)
        cov = np.atleast_2d(np.cov(acts, rowvar=False))
        return cls(acts.mean(axis=0), (cov + cov.T) / 2, acts.shape[0])


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(real: ActivationSet, fake: ActivationSet) -> float:
    """||mu_r - mu_f||^2 + Tr(S_r + S_f - 2 (S_r S_f)^(1/2)).

    The trace of the cross term is taken as the sum of square roots of the
    eigenvalues of S_r^(1/2) S_f S_r^(1/2), which is symmetric; negative
    eigenvalues from round-off are clamped to zero.
    """
    if real.mean.shape != fake.mean.shape:
        raise ValueError(f"feature dims differ: {real.mean.shape[0]} vs {fake.mean.shape[0]}")
    root = _sqrt_psd(real.cov)
    inner = root @ fake.cov @ root
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = np.sqrt(np.clip(eig, 0.0, None)).sum()
    diff = real.mean - fake.mean
    value = diff @ diff + np.trace(real.cov) + np.trace(fake.cov) - 2.0 * tr_cross
    return float(max(value, 0.0))


# -- R-precision --------------------------------------------------------------

def r_precision(image_feats: np.ndarray, text_feats: np.ndarray, true_index: Sequence[int],
                groups: Sequence, distractor_count: int = 99, seed: int = 0) -> float:
    """Fraction of images whose true text scores at least as high (cosine)
    as every one of ``distractor_count`` texts drawn from other groups."""
    img = np.asarray(image_feats, dtype=np.float64)
    txt = np.asarray(text_feats, dtype=np.float64)
    img = img / np.maximum(np.linalg.norm(img, axis=1, keepdims=True), 1e-12)
    txt = txt / np.maximum(np.linalg.norm(txt, axis=1, keepdims=True), 1e-12)
    groups = np.asarray(groups)
    rng = numpy_rng(seed, "r_precision")
    hits = 0
    for i, t in enumerate(true_index):
        if distractor_count == 0:
            hits += 1
            continue
        pool = np.flatnonzero(groups != groups[t])
        if len(pool) < distractor_count:
            raise ValueError(f"caption pool of {len(pool)} mismatched texts is smaller than "
                             f"{distractor_count} distractors")
        chosen = rng.choice(pool, size=distractor_count, replace=False)
        true_sim = img[i] @ txt[t]
        hits += bool(true_sim >= (txt[chosen] @ img[i]).max())
    return hits / len(true_index)


# -- reports --------------------------------------------------------------------

@dataclass
class EvalReport:
    is_mean: float
    is_std: float
    fid: float
    r_precision: float
    vqa_acc_consensus: float
    vqa_acc_top1_any: float
    n_samples: int
    seed: int
    with_replacement: bool = False
    epoch: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


# -- generation-time evaluation --------------------------------------------------

class Scorer:
    """Class posteriors and pooled features for IS/FID from the VQA image tower."""

    def __init__(self, vqa_model):
        self.model = vqa_model

    @torch.no_grad()
    def __call__(self, images: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
        size = self.model.config.image_size
        if images.shape[-1] != size:
            images = F.interpolate(images, size=(size, size), mode="bilinear")
        feats = self.model.image_features(images)
        probs = F.softmax(self.model.scorer(feats).double(), dim=1)
        return probs.numpy(), feats.double().numpy()


class InceptionScorer:
    """Inception-v3 posteriors and pool features; needs a local weights file."""

    def __init__(self, weights_path: str | Path):
        from torchvision.models import inception_v3

        net = inception_v3(weights=None, aux_logits=True, init_weights=False)
        net.load_state_dict(torch.load(weights_path, map_location="cpu"))
        net.eval()
        self.net = net
        self._pool = None
        net.avgpool.register_forward_hook(lambda m, i, o: setattr(self, "_pool", o.flatten(1)))

    @torch.no_grad()
    def __call__(self, images: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
        x = F.interpolate((images + 1) / 2, size=(299, 299), mode="bilinear")
        mean = torch.tensor([0.485, 0.456, 0.406])[:, None, None]
        std = torch.tensor([0.229, 0.224, 0.225])[:, None, None]
        logits = self.net((x - mean) / std)
        return F.softmax(logits.double(), dim=1).numpy(), self._pool.double().numpy()


def _scored_batches(scorer, images_iter):
    probs, feats = [], []
    for images in images_iter:
        p, f = scorer(images)
        probs.append(p)
        feats.append(f)
    return np.concatenate(probs), np.concatenate(feats)


def real_activations(scorer, images: torch.Tensor, batch: int = 64) -> ActivationSet:
    _, feats = _scored_batches(scorer, (images[i:i + batch] for i in range(0, len(images), batch)))
    return ActivationSet.from_activations(feats)


@torch.no_grad()
def generate_for_texts(generator, text_encoder, token_seqs: Sequence[Sequence[int]], seed: int,
                       label: str, batch: int = 64):
    """Final-stage images and sentence embeddings for each text, in order."""
    gen = torch.Generator()
    gen.manual_seed(derive_seed(seed, label))
    for start in range(0, len(token_seqs), batch):
        tb = TextBatch.from_sequences(token_seqs[start:start + batch])
        words, sent = text_encoder.encode(tb)
        noise = torch.randn(len(tb), generator.config.noise_dim, generator=gen)
        pyramid = generator(noise, sent, words, tb.mask, generator=gen)
        yield pyramid.final, sent


def _sample_indices(n_pool: int, n: int, seed: int, label: str) -> tuple[np.ndarray, bool]:
    rng = numpy_rng(seed, label)
    replace = n > n_pool
    return rng.choice(n_pool, size=n, replace=replace), replace


@torch.no_grad()
def evaluate_models(generator, text_encoder, image_encoder, vqa_model, answer_vocab, dataset, scorer,
                    n_samples: int, seed: int, is_splits: int = 10, distractors: int = 99,
                    batch: int = 64, real_stats: ActivationSet | None = None,
                    epoch: int | None = None) -> EvalReport:
    """IS/FID/R-precision on caption-generated images, VQA accuracy on QA-generated images."""
    modules = [generator, text_encoder, image_encoder, vqa_model]
    was_training = [m.training for m in modules]
    for m in modules:
        m.eval()
    try:
        captions = dataset.captions
        cap_idx, replace_c = _sample_indices(len(captions), n_samples, seed, "eval/captions")
        probs, feats, img_global = [], [], []
        for images, _ in generate_for_texts(generator, text_encoder, [captions[i].token_ids for i in cap_idx],
                                            seed, "eval/caption-noise", batch):
            p, f = scorer(images)
            probs.append(p)
            feats.append(f)
            img_global.append(image_encoder(images).global_.double().numpy())
        probs, feats, img_global = map(np.concatenate, (probs, feats, img_global))
        is_mean, is_std = inception_score(probs, min(is_splits, n_samples))
        if real_stats is None:
            real_stats = real_activations(scorer, dataset.images, batch)
        fid_value = fid(real_stats, ActivationSet.from_activations(feats))

        all_sent = []
        for start in range(0, len(captions), batch):
            tb = TextBatch.from_sequences([c.token_ids for c in captions[start:start + batch]])
            all_sent.append(text_encoder.encode(tb)[1].double().numpy())
        all_sent = np.concatenate(all_sent)
        groups = [c.image_id for c in captions]
        r_prec = r_precision(img_global, all_sent, cap_idx, groups, distractors, seed)

        qa = dataset.qa
        qa_idx, replace_q = _sample_indices(len(qa), n_samples, seed, "eval/qa")
        preds = []
        for start, (images, _) in zip(range(0, n_samples, batch),
                                      generate_for_texts(generator, text_encoder,
                                                         [qa[i].qa_token_ids for i in qa_idx],
                                                         seed, "eval/qa-noise", batch)):
            recs = [qa[i] for i in qa_idx[start:start + batch]]
            qb = TextBatch.from_sequences([r.question_token_ids for r in recs])
            size = vqa_model.config.image_size
            if images.shape[-1] != size:
                images = F.interpolate(images, size=(size, size), mode="bilinear")
            pred = vqa_model(images, qb.tokens, qb.lengths).logits.argmax(dim=1)
            preds.extend(answer_vocab.answers[int(k)] for k in pred)
        acc_c, acc_any = vqa_accuracy(preds, [qa[i].answers for i in qa_idx])
    finally:
        for m, t in zip(modules, was_training):
            m.train(t)
    return EvalReport(is_mean, is_std, fid_value, r_prec, acc_c, acc_any, n_samples, seed,
                      bool(replace_c or replace_q), epoch)
