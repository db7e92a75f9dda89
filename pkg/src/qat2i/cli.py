"""``qat2i`` command line: data preparation, pretraining, training, evaluation, sampling.

Exit codes: 0 success, 1 invalid input or missing prerequisite, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch
from filelock import FileLock, Timeout

from . import plotting, trainer
from .checkpoint import CheckpointError
from .config import Config, describe_keys, parse_overrides, resolve_config
from .data import SyntheticSceneSpec, TextBatch, generate_synthetic_dataset, load_dataset
from .data.prepare import prepare_dataset
from .models import OUTPUT_ROOT_ENV, resolve_path
from .utils import derive_seed, file_digest, set_deterministic

log = logging.getLogger("qat2i")

COMMANDS = ("prepare-data", "synth-data", "pretrain-damsm", "pretrain-vqa", "train", "evaluate", "sample")
REPORT_BEGIN, REPORT_END = "---- qat2i report ----", "---- end report ----"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of config keys")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="root seed (same as --set seed=N)")
    common.add_argument("--print-config", action="store_true", help="echo the resolved config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    epilog = f"config keys (file or --set):\n{describe_keys()}\n\nrelative paths resolve under ${OUTPUT_ROOT_ENV}"
    parser = _Parser(prog="qat2i", description="QA-conditioned attentional text-to-image GAN",
                     epilog=epilog, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    kw = {"parents": [common], "epilog": epilog, "formatter_class": argparse.RawDescriptionHelpFormatter}

    p = sub.add_parser("synth-data", **kw, help="render the synthetic shapes dataset")
    p.add_argument("--n", type=int, help="number of scenes (default: n_images)")
    p.add_argument("--out", help="dataset directory (default: dataset)")

    p = sub.add_parser("prepare-data", **kw, help="ingest COCO captions + VQA question/answer files")
    p.add_argument("--split", default="train", choices=("train", "test"))
    p.add_argument("--captions", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--images", required=True, help="image path pattern with {image_id}")
    p.add_argument("--out", help="dataset directory (default: dataset)")

    sub.add_parser("pretrain-damsm", **kw, help="pretrain the text and image encoders")
    sub.add_parser("pretrain-vqa", **kw, help="pretrain the VQA critic and scoring head")

    p = sub.add_parser("train", **kw, help="adversarial training of one variant")
    p.add_argument("--variant", help="baseline | naive_end_to_end | naive_pretrained | adapted")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")

    for name, helptext in (("evaluate", "IS / FID / R-precision / VQA accuracy of a checkpoint"),
                           ("sample", "write an 8x8 grid of generated images with captions")):
        p = sub.add_parser(name, **kw, help=helptext)
        p.add_argument("--checkpoint", default="best", help="best | latest | path (default: best)")
        p.add_argument("--n", type=int, help="generated samples (evaluate) or texts (sample, max 64)")
        if name == "evaluate":
            p.add_argument("--report", help="report path (default: <run>/eval_epochNNNN.json)")
        else:
            p.add_argument("--text", action="append", default=[], help="text to render (repeatable)")
            p.add_argument("--out", help="grid path (default: <run>/samples.png)")
    return parser


def _config(args) -> Config:
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    return resolve_config(args.config, overrides)


def _lock(directory: Path) -> FileLock:
    directory.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(directory / ".qat2i.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise UsageError(f"another qat2i process is using {directory}") from None
    return lock


def _emit(payload: dict) -> None:
    print(REPORT_BEGIN)
    print(json.dumps(payload, indent=1, sort_keys=True, default=str))
    print(REPORT_END)


def dataset_digest(root: Path) -> str:
    return file_digest(p for p in root.rglob("*") if p.is_file() and not p.name.startswith("."))


# -- commands ------------------------------------------------------------------------

def cmd_synth_data(cfg: Config, args) -> dict:
    out = resolve_path(args.out or cfg.dataset)
    spec = SyntheticSceneSpec(canvas_size=cfg.canvas_size, max_shapes=cfg.max_shapes, test_fraction=cfg.test_fraction)
    with _lock(out):
        generate_synthetic_dataset(spec, args.n or cfg.n_images, cfg.seed, out)
    return {"dataset": str(out), "digest": dataset_digest(out)}


def cmd_prepare_data(cfg: Config, args) -> dict:
    out = resolve_path(args.out or cfg.dataset)
    with _lock(out):
        prepare_dataset(out, args.split, args.captions, args.questions, args.annotations, args.images,
                        cfg.min_frequency)
    return {"dataset": str(out), "split": args.split}


def cmd_pretrain_damsm(cfg: Config, args) -> dict:
    path = resolve_path(cfg.damsm_checkpoint)
    with _lock(path.parent):
        trainer.pretrain_damsm(cfg)
    history = trainer.load_checkpoint(path, "damsm")["extra"]["history"]
    return {"checkpoint": str(path), "heldout_initial": history[0]["heldout"],
            "heldout_final": history[-1]["heldout"]}


def cmd_pretrain_vqa(cfg: Config, args) -> dict:
    path = resolve_path(cfg.vqa_checkpoint)
    with _lock(path.parent):
        trainer.pretrain_vqa(cfg)
    history = trainer.load_checkpoint(path, "vqa")["extra"]["history"]
    return {"checkpoint": str(path), "val_loss_initial": history[0]["loss"], "val_loss_final": history[-1]["loss"],
            "val_accuracy": history[-1]["accuracy"], "chance": history[-1]["chance"]}


def cmd_train(cfg: Config, args) -> dict:
    run_dir = resolve_path(cfg.output)
    with _lock(run_dir):
        result = trainer.train(cfg, resume=args.resume)
        figures = [plotting.plot_losses(result.metrics_path, run_dir / "losses.png"),
                   plotting.plot_eval_series(result.metrics_path, run_dir / "eval_series.png")]
    best = run_dir / "best.json"
    return {"run_dir": str(run_dir), "checkpoints": [m.path for m in result.checkpoints],
            "best": json.loads(best.read_text()) if best.exists() else None,
            "calls": dict(result.calls), "figures": [str(f) for f in figures if f]}


def cmd_evaluate(cfg: Config, args) -> dict:
    if args.n:
        cfg = cfg.replace(eval_samples=args.n)
    run_dir = resolve_path(cfg.output)
    with _lock(run_dir):
        ckpt = trainer.resolve_checkpoint(run_dir, args.checkpoint)
        t = trainer.restore(cfg, ckpt)
        report = t.evaluate()
        if report is None:
            raise trainer.MissingCheckpoint("evaluation needs a VQA scorer; run `qat2i pretrain-vqa` first")
        path = Path(args.report) if args.report else run_dir / f"eval_epoch{t.epoch:04d}.json"
        report.save(path)
        figures = []
        metrics = run_dir / "metrics.jsonl"
        if metrics.exists():
            figures.append(plotting.plot_eval_series(metrics, path.with_suffix(".series.png")))
        figures.append(_sample_grid(t, cfg, [], path.with_suffix(".samples.png"), 64))
    return {"checkpoint": str(ckpt), "report": str(path), **report.__dict__,
            "figures": [str(f) for f in figures if f]}


@torch.no_grad()
def _sample_grid(t, cfg: Config, texts: list[str], out: Path, n: int) -> Path:
    vocab = t.train_ds.vocab
    if texts:
        seqs = [vocab.encode(x) for x in texts]
    else:
        test = load_dataset(resolve_path(cfg.dataset), "test", cfg.canvas_size)
        gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "sample/texts"))
        pick = torch.randperm(len(test.captions), generator=gen)[:n].tolist()
        seqs = [test.captions[i].token_ids for i in pick]
    seqs = [s for s in seqs if any(i != vocab.unk_id for i in s)][:64]
    if not seqs:
        raise UsageError("no encodable text to sample")
    t.generator.eval()
    tb = TextBatch.from_sequences(seqs)
    words, sent = t.text_encoder.encode(tb)
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "sample/noise"))
    noise = torch.randn(len(seqs), t.generator.config.noise_dim, generator=gen)
    pyramid = t.generator(noise, sent, words, tb.mask, generator=gen)
    plotting.save_image_grid(pyramid.final, out)
    lines = [f"{k:02d}\t{vocab.decode(s)}" for k, s in enumerate(seqs)]
    out.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    if pyramid.attention:
        n_words = int(tb.lengths[0])
        plotting.plot_attention(pyramid.final[0], pyramid.attention[-1][0, :n_words],
                                [vocab.id_to_token[i] for i in seqs[0][:n_words]], out.with_suffix(".attention.png"))
    return out


def cmd_sample(cfg: Config, args) -> dict:
    run_dir = resolve_path(cfg.output)
    with _lock(run_dir):
        ckpt = trainer.resolve_checkpoint(run_dir, args.checkpoint)
        t = trainer.restore(cfg, ckpt)
        out = Path(args.out) if args.out else run_dir / "samples.png"
        _sample_grid(t, cfg, args.text, out, min(args.n or 64, 64))
    return {"checkpoint": str(ckpt), "grid": str(out), "captions": str(out.with_suffix(".txt"))}


HANDLERS = {"synth-data": cmd_synth_data, "prepare-data": cmd_prepare_data, "pretrain-damsm": cmd_pretrain_damsm,
            "pretrain-vqa": cmd_pretrain_vqa, "train": cmd_train, "evaluate": cmd_evaluate, "sample": cmd_sample}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _config(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ValueError, OSError) as exc:
        print(f"qat2i: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    if args.print_config:
        print(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
        return 0
    set_deterministic(cfg.threads)
    try:
        _emit({"command": args.command, **HANDLERS[args.command](cfg, args)})
    except (UsageError, trainer.MissingCheckpoint, CheckpointError, FileExistsError, ValueError) as exc:
        print(f"qat2i: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, including divergence
        log.debug("failure", exc_info=True)
        print(f"qat2i: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
