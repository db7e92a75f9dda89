"""Pretraining (DAMSM, VQA) and alternating adversarial training."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from .config import Config
from .damsm import damsm_loss
from .data.batching import PairedBatch, TextBatch, make_batches
from .data.dataset import Dataset, load_dataset
from .evaluation import EvalReport, InceptionScorer, Scorer, evaluate_models, real_activations
from .models import (build_discriminators, build_generator, build_image_encoder, build_text_encoder,
                     build_vqa, image_pyramid, resize, resolve_path)
from .objectives import discriminator_accuracy, discriminator_loss, generator_loss
from .utils import derive_seed, freeze, module_digest, numpy_rng, set_deterministic
from .vqa import AnswerVocabulary, vqa_accuracy, vqa_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class MissingCheckpoint(FileNotFoundError):
    pass


def _adam(params, lr, cfg: Config):
    return torch.optim.Adam(params, lr=lr, betas=(cfg.beta1, cfg.beta2))


def _chunks(n: int, batch_size: int, seed: int, label: str, shuffle: bool = True) -> list[np.ndarray]:
    order = numpy_rng(seed, label).permutation(n) if shuffle else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _require_checkpoint(path: Path, command: str) -> Path:
    if not path.exists():
        raise MissingCheckpoint(f"missing checkpoint {path}; run `qat2i {command}` first")
    return path


def _write_jsonl(fh, record: dict) -> None:
    fh.write(json.dumps(record, sort_keys=True) + "\n")
    fh.flush()


# -- DAMSM pretraining ------------------------------------------------------------

def _damsm_texts(ds: Dataset, with_qa: bool) -> list[tuple[list[int], str]]:
    texts = [(c.token_ids, c.image_id) for c in ds.captions]
    if with_qa:
        texts += [(q.qa_token_ids, q.image_id) for q in ds.qa]
    return texts


def _damsm_batch_loss(text_encoder, image_encoder, ds: Dataset, items, cfg: Config):
    tb = TextBatch.from_sequences([t for t, _ in items])
    images = ds.images_for([iid for _, iid in items])
    words, sent = text_encoder.encode(tb)
    loss, _ = damsm_loss(image_encoder(resize(images, cfg.final_resolution)), words, sent, tb.mask,
                         cfg.gamma1, cfg.gamma2, cfg.gamma3, same=tb.same_text())
    return loss


@torch.no_grad()
def heldout_damsm_loss(text_encoder, image_encoder, ds: Dataset, cfg: Config) -> float:
    items = _damsm_texts(ds, cfg.pretrain_with_qa)
    modes = text_encoder.training, image_encoder.training
    text_encoder.eval()
    image_encoder.eval()
    losses = []
    for idx in _chunks(len(items), cfg.batch_size, cfg.seed, "damsm/heldout"):
        if len(idx) >= 2:
            losses.append(float(_damsm_batch_loss(text_encoder, image_encoder, ds, [items[i] for i in idx], cfg)))
    text_encoder.train(modes[0])
    image_encoder.train(modes[1])
    return float(np.mean(losses))


def pretrain_damsm(cfg: Config) -> Path:
    """Train text + image encoders on the matching loss; writes ``cfg.damsm_checkpoint``."""
    set_deterministic(cfg.threads)
    torch.manual_seed(derive_seed(cfg.seed, "damsm/init"))
    train_ds = load_dataset(resolve_path(cfg.dataset), "train", cfg.canvas_size)
    test_ds = load_dataset(resolve_path(cfg.dataset), "test", cfg.canvas_size)
    text_encoder = build_text_encoder(cfg, len(train_ds.vocab))
    image_encoder = build_image_encoder(cfg)
    params = list(text_encoder.parameters()) + list(image_encoder.parameters())
    opt = _adam(params, cfg.damsm_lr, cfg)
    out = resolve_path(cfg.damsm_checkpoint)
    items = _damsm_texts(train_ds, cfg.pretrain_with_qa)

    def save(history):
        save_checkpoint(out, "damsm", {"text_encoder": text_encoder.state_dict(),
                                       "image_encoder": image_encoder.state_dict()},
                        {"vocab_hash": train_ds.vocab.hash, "config": cfg.to_dict()},
                        {"history": history})

    history = [{"epoch": 0, "heldout": heldout_damsm_loss(text_encoder, image_encoder, test_ds, cfg)}]
    save(history)
    for epoch in range(1, cfg.damsm_epochs + 1):
        text_encoder.train()
        image_encoder.train()
        losses = []
        for idx in _chunks(len(items), cfg.batch_size, cfg.seed, f"damsm/epoch{epoch}"):
            if len(idx) < 2:
                continue
            loss = _damsm_batch_loss(text_encoder, image_encoder, train_ds, [items[i] for i in idx], cfg)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite DAMSM loss at epoch {epoch}; last finite checkpoint kept at {out}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(text_encoder.rnn.parameters(), 0.25)
            opt.step()
            losses.append(loss.item())
        record = {"epoch": epoch, "train": float(np.mean(losses)),
                  "heldout": heldout_damsm_loss(text_encoder, image_encoder, test_ds, cfg)}
        history.append(record)
        log.info("damsm epoch %d train %.4f heldout %.4f", epoch, record["train"], record["heldout"])
        save(history)
    return out


def load_damsm(cfg: Config, vocab_hash: str, vocab_size: int):
    blob = load_checkpoint(_require_checkpoint(resolve_path(cfg.damsm_checkpoint), "pretrain-damsm"),
                           "damsm", vocab_hash=vocab_hash)
    text_encoder = build_text_encoder(cfg, vocab_size)
    image_encoder = build_image_encoder(cfg)
    text_encoder.load_state_dict(blob["states"]["text_encoder"])
    image_encoder.load_state_dict(blob["states"]["image_encoder"])
    return freeze(text_encoder), freeze(image_encoder), blob


# -- VQA pretraining ------------------------------------------------------------------

def _vqa_forward(vqa, ds: Dataset, records, images=None):
    qb = TextBatch.from_sequences([r.question_token_ids for r in records])
    if images is None:
        images = ds.images_for([r.image_id for r in records])
    return vqa(resize(images, vqa.config.image_size), qb.tokens, qb.lengths)


@torch.no_grad()
def vqa_validation(vqa, answers: AnswerVocabulary, ds: Dataset, batch: int = 64) -> dict:
    was = vqa.training
    vqa.eval()
    preds, losses = [], []
    for start in range(0, len(ds.qa), batch):
        recs = ds.qa[start:start + batch]
        out = _vqa_forward(vqa, ds, recs)
        loss, _ = vqa_loss(out.log_probs, answers.targets([r.answers for r in recs]))
        losses.append(float(loss) * len(recs))
        preds.extend(answers.answers[int(k)] for k in out.logits.argmax(1))
    vqa.train(was)
    acc, acc_any = vqa_accuracy(preds, [r.answers for r in ds.qa])
    return {"loss": sum(losses) / len(ds.qa), "accuracy": acc, "accuracy_top1_any": acc_any,
            "chance": 1.0 / len(answers)}


def _answer_vocab(ds: Dataset, cfg: Config) -> AnswerVocabulary:
    return AnswerVocabulary.build([r.answers for r in ds.qa], cfg.max_answers)


def pretrain_vqa(cfg: Config) -> Path:
    """Train the VQA model (plus its scene-class head when labels exist)."""
    set_deterministic(cfg.threads)
    torch.manual_seed(derive_seed(cfg.seed, "vqa/init"))
    train_ds = load_dataset(resolve_path(cfg.dataset), "train", cfg.canvas_size)
    test_ds = load_dataset(resolve_path(cfg.dataset), "test", cfg.canvas_size)
    answers = _answer_vocab(train_ds, cfg)
    n_classes = int(train_ds.meta.get("n_classes", 0)) if train_ds.labels is not None else 0
    vqa = build_vqa(cfg, len(train_ds.vocab), len(answers), n_classes)
    opt = _adam(vqa.parameters(), cfg.vqa_lr, cfg)
    out = resolve_path(cfg.vqa_checkpoint)
    label_of = dict(zip(train_ds.image_ids, train_ds.labels.tolist())) if n_classes else {}

    def save(history):
        save_checkpoint(out, "vqa", {"vqa": vqa.state_dict()},
                        {"vocab_hash": train_ds.vocab.hash, "answer_hash": answers.hash,
                         "answers": answers.answers, "n_classes": n_classes, "config": cfg.to_dict()},
                        {"history": history})

    history = [{"epoch": 0, **vqa_validation(vqa, answers, test_ds)}]
    save(history)
    for epoch in range(1, cfg.vqa_epochs + 1):
        vqa.train()
        losses = []
        for idx in _chunks(len(train_ds.qa), cfg.batch_size, cfg.seed, f"vqa/epoch{epoch}"):
            recs = [train_ds.qa[i] for i in idx]
            images = train_ds.images_for([r.image_id for r in recs])
            outp = _vqa_forward(vqa, train_ds, recs, images)
            loss, _ = vqa_loss(outp.log_probs, answers.targets([r.answers for r in recs]))
            if n_classes:
                labels = torch.tensor([label_of[r.image_id] for r in recs])
                loss = loss + F.cross_entropy(vqa.class_logits(resize(images, vqa.config.image_size)), labels)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite VQA loss at epoch {epoch}; last finite checkpoint kept at {out}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        record = {"epoch": epoch, "train": float(np.mean(losses)), **vqa_validation(vqa, answers, test_ds)}
        history.append(record)
        log.info("vqa epoch %d train %.4f val acc %.3f", epoch, record["train"], record["accuracy"])
        save(history)
    return out


def load_vqa(cfg: Config, vocab_hash: str, path: Path | None = None):
    path = _require_checkpoint(path or resolve_path(cfg.vqa_checkpoint), "pretrain-vqa")
    blob = load_checkpoint(path, "vqa", vocab_hash=vocab_hash)
    h = blob["header"]
    answers = AnswerVocabulary(h["answers"])
    vocab_size = blob["states"]["vqa"]["embedding.weight"].shape[0]
    vqa = build_vqa(cfg, vocab_size, len(answers), h["n_classes"])
    vqa.load_state_dict(blob["states"]["vqa"])
    return vqa, answers, blob


# -- adversarial training --------------------------------------------------------------

@dataclass
class TrainResult:
    run_dir: Path
    checkpoints: list[CheckpointMeta] = field(default_factory=list)
    metrics_path: Path | None = None
    calls: Counter = field(default_factory=Counter)
    digests: dict[str, str] = field(default_factory=dict)


def select_best_checkpoint(series: Sequence[CheckpointMeta]) -> CheckpointMeta:
    """Highest IS; ties go to the latest epoch."""
    evaluated = [m for m in series if m.is_mean is not None]
    if not evaluated:
        raise ValueError("no evaluated checkpoint to select from")
    return max(evaluated, key=lambda m: (m.is_mean, m.epoch))


class GANTrainer:
    """Owns every network for one run and performs the alternating updates."""

    def __init__(self, cfg: Config):
        set_deterministic(cfg.threads)
        self.cfg = cfg
        self.variant = cfg.variant_spec
        self.run_dir = resolve_path(cfg.output)
        self.train_ds = load_dataset(resolve_path(cfg.dataset), "train", cfg.canvas_size)
        vocab = self.train_ds.vocab
        self.text_encoder, self.image_encoder, _ = load_damsm(cfg, vocab.hash, len(vocab))

        vqa_path = resolve_path(cfg.vqa_checkpoint)
        self.vqa = self.scoring_vqa = self.scoring_answers = None
        if self.variant.needs_pretrained_vqa:
            _require_checkpoint(vqa_path, "pretrain-vqa")
        if vqa_path.exists():
            self.scoring_vqa, self.scoring_answers, _ = load_vqa(cfg, vocab.hash, vqa_path)
            freeze(self.scoring_vqa)
        self.answers = self.scoring_answers
        if self.variant.vqa_loss_enabled:
            if self.variant.vqa_model_trainable:
                if self.answers is None:
                    self.answers = _answer_vocab(self.train_ds, cfg)
                torch.manual_seed(derive_seed(cfg.seed, "vqa-e2e/init"))
                n_classes = self.scoring_vqa.config.n_classes if self.scoring_vqa is not None else 0
                self.vqa = build_vqa(cfg, len(vocab), len(self.answers), n_classes)
            else:
                self.vqa = self.scoring_vqa

        torch.manual_seed(derive_seed(cfg.seed, "gan/init"))
        self.generator = build_generator(cfg)
        self.discriminators = build_discriminators(cfg)
        self.opt_g = _adam(self.generator.parameters(), cfg.lr_g, cfg)
        self.opt_d = _adam(self.discriminators.parameters(), cfg.lr_d, cfg)
        self.opt_vqa = _adam(self.vqa.parameters(), cfg.lr_vqa, cfg) \
            if self.vqa is not None and self.variant.vqa_model_trainable else None
        self.resolutions = self.generator.config.resolutions
        self.loss_stages = list(range(len(self.resolutions))) if cfg.stages_in_loss == "all" \
            else [len(self.resolutions) - 1]
        self.epoch = 0
        self.step = 0
        self.calls: Counter = Counter()
        self.checkpoints: list[CheckpointMeta] = []
        self._eval_set = None
        self._scorer = None
        self._real_stats = None

    # -- state -------------------------------------------------------------------
    def _states(self) -> dict:
        states = {"generator": self.generator.state_dict(), "discriminators": self.discriminators.state_dict(),
                  "opt_g": self.opt_g.state_dict(), "opt_d": self.opt_d.state_dict()}
        if self.opt_vqa is not None:
            states["vqa"] = self.vqa.state_dict()
            states["opt_vqa"] = self.opt_vqa.state_dict()
        return states

    def digests(self) -> dict[str, str]:
        out = {"generator": module_digest(self.generator), "discriminators": module_digest(self.discriminators),
               "text_encoder": module_digest(self.text_encoder), "image_encoder": module_digest(self.image_encoder)}
        if self.vqa is not None:
            out["vqa"] = module_digest(self.vqa)
        return out

    def save(self, report: EvalReport | None = None) -> CheckpointMeta:
        path = self.run_dir / f"ckpt_epoch{self.epoch:04d}.pt"
        meta = CheckpointMeta(self.epoch, self.step, report.is_mean if report else None, self.cfg.hash,
                              self.digests(), str(path))
        save_checkpoint(path, "gan", self._states(),
                        {"vocab_hash": self.train_ds.vocab.hash, "config": self.cfg.to_dict(),
                         "answer_hash": self.answers.hash if self.answers else None},
                        {"meta": meta.to_dict(), "eval": report.__dict__ if report else None,
                         "calls": dict(self.calls)})
        self.checkpoints = [m for m in self.checkpoints if m.epoch != self.epoch] + [meta]
        return meta

    def load(self, path: Path) -> None:
        blob = load_checkpoint(path, "gan", vocab_hash=self.train_ds.vocab.hash)
        s = blob["states"]
        self.generator.load_state_dict(s["generator"])
        self.discriminators.load_state_dict(s["discriminators"])
        self.opt_g.load_state_dict(s["opt_g"])
        self.opt_d.load_state_dict(s["opt_d"])
        if self.opt_vqa is not None:
            self.vqa.load_state_dict(s["vqa"])
            self.opt_vqa.load_state_dict(s["opt_vqa"])
        meta = blob["extra"]["meta"]
        self.epoch, self.step = meta["epoch"], meta["step"]
        self.calls = Counter(blob["extra"].get("calls", {}))

    def existing_checkpoints(self) -> list[CheckpointMeta]:
        metas = []
        for path in sorted(self.run_dir.glob("ckpt_epoch*.pt")):
            blob = load_checkpoint(path, "gan")
            metas.append(CheckpointMeta(**{**blob["extra"]["meta"], "path": str(path)}))
        return metas

    # -- one step -------------------------------------------------------------------
    def _discriminate(self, images: list[torch.Tensor], sentence: torch.Tensor, tag: str):
        self.calls[tag] += 1
        return [self.discriminators[i](images[i], sentence) for i in self.loss_stages]

    def _forward(self, batch: PairedBatch, gen: torch.Generator) -> dict:
        """Encode texts (frozen encoder) and generate caption and QA images."""
        use_qa = self.variant.uses_qa and batch.qa is not None
        dtype = next(self.generator.parameters()).dtype
        fwd = {"use_qa": use_qa}
        with torch.no_grad():
            fwd["words_c"], fwd["sent_c"] = self.text_encoder.encode(batch.caption)
            if use_qa:
                fwd["words_q"], fwd["sent_q"] = self.text_encoder.encode(batch.qa)
        noise_c = torch.randn(len(batch.caption), self.cfg.noise_dim, generator=gen).to(dtype)
        fwd["fake_c"] = self.generator(noise_c, fwd["sent_c"], fwd["words_c"], batch.caption.mask, generator=gen)
        if use_qa:
            noise_q = torch.randn(len(batch.qa), self.cfg.noise_dim, generator=gen).to(dtype)
            fwd["fake_q"] = self.generator(noise_q, fwd["sent_q"], fwd["words_q"], batch.qa.mask, generator=gen)
        return fwd

    def generator_objective(self, batch: PairedBatch, fwd: dict):
        """L_G for one batch given the generated images in ``fwd``."""
        cfg, v = self.cfg, self.variant
        fake_c, use_qa = fwd["fake_c"], fwd["use_qa"]
        g_fake_c = self._discriminate(fake_c.images, fwd["sent_c"], "g_fake_caption")
        g_fake_q = None
        if v.discriminator_sees_qa and use_qa:
            g_fake_q = self._discriminate(fwd["fake_q"].images, fwd["sent_q"], "d_qa")
        damsm_c, _ = damsm_loss(self.image_encoder(fake_c.final), fwd["words_c"], fwd["sent_c"], batch.caption.mask,
                                cfg.gamma1, cfg.gamma2, cfg.gamma3, same=batch.caption.same_text())
        damsm_q = None
        if use_qa and cfg.use_damsm_on_qa and len(batch.qa) >= 2:
            damsm_q, _ = damsm_loss(self.image_encoder(fwd["fake_q"].final), fwd["words_q"], fwd["sent_q"],
                                    batch.qa.mask, cfg.gamma1, cfg.gamma2, cfg.gamma3, same=batch.qa.same_text())
        vqa_term = None
        if v.vqa_loss_enabled and use_qa:
            self.calls["vqa"] += 1
            out = self.vqa(resize(fwd["fake_q"].final, self.vqa.config.image_size),
                           batch.question.tokens, batch.question.lengths)
            targets = self.answers.targets([r.answers for r in batch.qa_records]).to(out.logits.dtype)
            vqa_term, _ = vqa_loss(out.log_probs, targets)
        # element-mean KL per latent, summed over the caption and QA latents
        kl = fake_c.latent.kl.mean() / cfg.condition_dim
        if use_qa:
            kl = kl + fwd["fake_q"].latent.kl.mean() / cfg.condition_dim
        return generator_loss(g_fake_c, g_fake_q, v, damsm_c, damsm_q, vqa_term, kl,
                              cfg.effective_lambda_damsm, cfg.lambda_vqa, cfg.effective_kl_weight,
                              cfg.use_damsm_on_qa)

    def train_step(self, batch: PairedBatch) -> dict:
        v = self.variant
        gen = torch.Generator()
        gen.manual_seed(derive_seed(self.cfg.seed, f"train/step{self.step}"))
        fwd = self._forward(batch, gen)
        real = image_pyramid(batch.caption_images, self.resolutions)

        # discriminator update on detached fakes
        d_real = self._discriminate(real, fwd["sent_c"], "d_real")
        d_fake_c = self._discriminate([x.detach() for x in fwd["fake_c"].images], fwd["sent_c"], "d_fake_caption")
        d_fake_q = None
        if v.discriminator_sees_qa and fwd["use_qa"]:
            d_fake_q = self._discriminate([x.detach() for x in fwd["fake_q"].images], fwd["sent_q"], "d_qa")
        rep_d = discriminator_loss(d_real, d_fake_c, d_fake_q, v)
        if not torch.isfinite(rep_d.total):
            raise TrainingDiverged(f"non-finite discriminator loss at step {self.step}")
        self.opt_d.zero_grad(set_to_none=True)
        rep_d.total.backward()
        self.opt_d.step()
        d_acc = discriminator_accuracy(d_real, d_fake_c)

        # generator update; discriminator parameters take no gradient
        for p in self.discriminators.parameters():
            p.requires_grad_(False)
        try:
            rep_g = self.generator_objective(batch, fwd)
            if not torch.isfinite(rep_g.total):
                raise TrainingDiverged(f"non-finite generator loss at step {self.step}")
            self.opt_g.zero_grad(set_to_none=True)
            if self.opt_vqa is not None:
                self.opt_vqa.zero_grad(set_to_none=True)
            rep_g.total.backward()
            self.opt_g.step()
            if self.opt_vqa is not None:
                self.opt_vqa.step()
        finally:
            for p in self.discriminators.parameters():
                p.requires_grad_(True)

        record = {"type": "step", "epoch": self.epoch, "step": self.step, "d_acc": d_acc,
                  **rep_d.scalars(), **rep_g.scalars()}
        self.step += 1
        return record

    # -- evaluation -------------------------------------------------------------------
    def evaluate(self) -> EvalReport | None:
        if self.scoring_vqa is None or self.scoring_vqa.scorer is None:
            log.warning("no pretrained VQA scorer; skipping evaluation")
            return None
        if self._eval_set is None:
            self._eval_set = load_dataset(resolve_path(self.cfg.dataset), "test", self.cfg.canvas_size)
            weights = self.cfg.inception_weights
            self._scorer = InceptionScorer(resolve_path(weights)) if weights else Scorer(self.scoring_vqa)
            self._real_stats = real_activations(self._scorer, self._eval_set.images, self.cfg.eval_batch)
        return evaluate_models(self.generator, self.text_encoder, self.image_encoder, self.scoring_vqa,
                               self.scoring_answers,
                               self._eval_set, self._scorer, self.cfg.eval_samples, self.cfg.seed,
                               self.cfg.is_splits, self.cfg.r_distractors, self.cfg.eval_batch,
                               self._real_stats, self.epoch)

    # -- loop ----------------------------------------------------------------------------
    def fit(self, resume: bool = False) -> TrainResult:
        cfg = self.cfg
        self.run_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = self.run_dir / "metrics.jsonl"
        existing = self.existing_checkpoints()
        if existing and resume:
            latest = max(existing, key=lambda m: m.epoch)
            self.load(Path(latest.path))
            self.checkpoints = existing
            _truncate_metrics(metrics_path, self.epoch)
        elif existing:
            raise FileExistsError(f"{self.run_dir} already holds checkpoints; pass resume to continue")
        else:
            metrics_path.write_text("")
        (self.run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")

        ds = self.train_ds
        with open(metrics_path, "a") as fh:
            while self.epoch < cfg.epochs:
                self.generator.train()
                self.discriminators.train()
                if self.opt_vqa is not None:
                    self.vqa.train()
                for batch in make_batches(ds.captions, ds.qa if self.variant.uses_qa else [], cfg.batch_size,
                                          cfg.seed, self.epoch, cfg.qa_ratio, ds.images, ds.image_index):
                    if len(batch.caption) < 2:
                        continue
                    _write_jsonl(fh, self.train_step(batch))
                self.epoch += 1
                final = self.epoch == cfg.epochs
                report = None
                if cfg.eval_every and (self.epoch % cfg.eval_every == 0 or final):
                    report = self.evaluate()
                    if report is not None:
                        _write_jsonl(fh, {"type": "eval", **report.__dict__})
                if final or self.epoch % cfg.checkpoint_every == 0:
                    self.save(report)
        if self.checkpoints and any(m.is_mean is not None for m in self.checkpoints):
            best = select_best_checkpoint(self.checkpoints)
            (self.run_dir / "best.json").write_text(json.dumps(best.to_dict(), indent=1, sort_keys=True) + "\n")
        return TrainResult(self.run_dir, list(self.checkpoints), metrics_path, Counter(self.calls), self.digests())


def _truncate_metrics(path: Path, epoch: int) -> None:
    """Drop metric records written after the checkpoint being resumed from."""
    if not path.exists():
        return
    keep = []
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        if rec["epoch"] is not None and (rec["epoch"] < epoch or (rec["type"] == "eval" and rec["epoch"] <= epoch)):
            keep.append(line)
    path.write_text("".join(l + "\n" for l in keep))


def train(cfg: Config, resume: bool = False) -> TrainResult:
    return GANTrainer(cfg).fit(resume=resume)


def resolve_checkpoint(run_dir: Path, spec: str) -> Path:
    """``best`` (highest IS), ``latest``, or an explicit checkpoint path."""
    if spec not in ("best", "latest"):
        path = Path(spec) if Path(spec).is_absolute() or Path(spec).exists() else run_dir / spec
        if not path.exists():
            raise MissingCheckpoint(f"checkpoint {spec} not found")
        return path
    paths = sorted(run_dir.glob("ckpt_epoch*.pt"))
    if not paths:
        raise MissingCheckpoint(f"no checkpoints in {run_dir}; run `qat2i train` first")
    if spec == "latest":
        return paths[-1]
    metas = []
    for path in paths:
        meta = load_checkpoint(path, "gan")["extra"]["meta"]
        metas.append(CheckpointMeta(**{**meta, "path": str(path)}))
    try:
        return Path(select_best_checkpoint(metas).path)
    except ValueError:
        log.warning("no evaluated checkpoint in %s; using the latest", run_dir)
        return paths[-1]


def restore(cfg: Config, checkpoint: Path) -> GANTrainer:
    """A trainer whose networks hold the state saved in ``checkpoint``.

    Architecture and data keys come from the checkpoint's stored config;
    evaluation keys (seed, sample counts, batch) come from ``cfg``.
    """
    stored = load_checkpoint(checkpoint, "gan")["header"]["config"]
    keep = {"seed", "eval_samples", "is_splits", "r_distractors", "eval_batch", "threads", "output",
            "dataset", "damsm_checkpoint", "vqa_checkpoint", "inception_weights"}
    merged = Config(**{**stored, **{k: getattr(cfg, k) for k in keep}})
    trainer = GANTrainer(merged)
    trainer.load(checkpoint)
    return trainer
