"""Acceptance criteria 1-8, one PASS/FAIL line each.

Run alone with ``pytest tests/test_acceptance.py -v``. Criterion 6 trains the
desk-scale pipeline (synthetic 64px scenes, three seeds, two variants) and
takes roughly 20 minutes on one CPU thread; its per-seed table, summary JSON
and comparison figure land in ``$QAT2I_ACCEPTANCE_DIR`` (default
``acceptance_output/`` next to this directory).
"""

import contextlib
import json
import math
import os
import time
from pathlib import Path

import pytest
import torch

import test_evaluation as ev
import test_networks as nets
import test_objectives as obj
import test_trainer as tr
import test_vqa as vq
from conftest import central_difference_check
from qat2i import plotting, trainer
from qat2i.config import resolve_config
from qat2i.data import SyntheticSceneSpec, TextBatch, generate_synthetic_dataset
from qat2i.utils import derive_seed

SEEDS = (0, 1, 2)
OUT = Path(os.environ.get("QAT2I_ACCEPTANCE_DIR", Path(__file__).resolve().parents[1] / "acceptance_output"))


@pytest.fixture
def verdict(capsys):
    """Time a criterion body and print exactly one PASS/FAIL line for it."""

    @contextlib.contextmanager
    def check(number, title, budget_s=None):
        start = time.perf_counter()
        status, detail = "PASS", ""
        try:
            yield
            elapsed = time.perf_counter() - start
            if budget_s is not None and elapsed >= budget_s:
                status, detail = "FAIL", f" over the {budget_s:.0f} s budget"
                raise AssertionError(f"criterion {number} took {elapsed:.1f} s (budget {budget_s} s)")
        except BaseException as exc:
            if status == "PASS":
                status, detail = "FAIL", f" {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            raise
        finally:
            elapsed = time.perf_counter() - start
            with capsys.disabled():
                print(f"\nACCEPTANCE {number} {status}: {title} ({elapsed:.1f} s){detail}", flush=True)

    return check


def test_criterion_1_loss_oracle(verdict):
    with verdict(1, "generator/discriminator losses match the scalar oracle on 1000 tuples", 10):
        obj.test_oracle_equivalence_1000_tuples()
        obj.test_generator_worked_example()
        obj.test_discriminator_worked_example()
        obj.test_generator_certain_discriminator_gives_zero()
        obj.test_perfect_discriminator_gives_zero()
        obj.test_half_probabilities_give_six_ln_two()


def test_criterion_2_vqa_loss(verdict):
    with verdict(2, "VQA answer loss examples at 1e-9 and monotonicity over 1e4 distributions", 10):
        vq.test_loss_single_certain_answer()
        vq.test_loss_exact_logs()
        vq.test_loss_three_answers_scalar_oracle()
        vq.test_loss_monotone_in_answer_probability()


def test_criterion_3_gradients(verdict, tiny, tmp_path):
    with verdict(3, "central-difference gradients: attention, D heads, VQA pixels, composite L_G (double, <1e-5)",
                 300):
        nets.test_attention_gradient(central_difference_check)
        nets.test_discriminator_gradient(central_difference_check)
        vq.test_pixel_gradient(central_difference_check)
        tr.test_composite_generator_loss_gradient(tiny, tmp_path, central_difference_check)


def test_criterion_4_metrics(verdict):
    with verdict(4, "FID/IS/R-precision sanity values", 60):
        ev.test_fid_identical_sets()
        ev.test_fid_moment_matched_gaussians()
        ev.test_fid_symmetry()
        ev.test_is_identical_rows()
        ev.test_is_one_hot_coverage()
        ev.test_r_precision_oracle_encoder()
        ev.test_r_precision_random_features_near_one_percent()


def test_criterion_5_variant_algebra(verdict, tiny, tmp_path):
    with verdict(5, "empty-QA equality, QA routing call counts, VQA digests by variant"):
        obj.test_adapted_with_empty_qa_equals_baseline()
        for variant in ("baseline", "naive_end_to_end", "naive_pretrained", "adapted"):
            tr.test_variant_routing(tiny, tmp_path, variant)


# -- criterion 6: desk-scale training ---------------------------------------------------------

def _mean_d_acc(metrics_path: Path, warmup: int) -> float:
    steps, _ = plotting.read_metrics(metrics_path)
    values = [s["d_acc"] for s in steps if s["epoch"] >= warmup]
    return sum(values) / len(values)


def _finite_losses(metrics_path: Path) -> bool:
    steps, _ = plotting.read_metrics(metrics_path)
    return all(math.isfinite(v) for s in steps for k, v in s.items() if isinstance(v, float))


@torch.no_grad()
def _conditioning_gap(checkpoint: Path, cfg) -> float:
    """Mean absolute pixel difference between two texts rendered from the same noise."""
    t = trainer.restore(cfg, checkpoint)
    t.generator.eval()
    vocab = t.train_ds.vocab
    tb = TextBatch.from_sequences([vocab.encode("a red circle"), vocab.encode("a blue circle")])
    words, sent = t.text_encoder.encode(tb)
    gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "acceptance/noise"))
    noise = torch.randn(1, cfg.noise_dim, generator=gen).expand(2, -1)
    images = t.generator(noise, sent, words, tb.mask, eps=torch.zeros(2, cfg.condition_dim)).final
    return float((images[0] - images[1]).abs().mean())


def run_desk(root: Path) -> dict:
    start = time.perf_counter()
    cfg = resolve_config(None, {"dataset": str(root / "data"), "damsm_checkpoint": str(root / "damsm.pt"),
                                "vqa_checkpoint": str(root / "vqa.pt")})
    generate_synthetic_dataset(SyntheticSceneSpec(canvas_size=cfg.canvas_size, max_shapes=cfg.max_shapes,
                                                  test_fraction=cfg.test_fraction), cfg.n_images, cfg.seed,
                               root / "data")
    damsm_hist = trainer.load_checkpoint(trainer.pretrain_damsm(cfg), "damsm")["extra"]["history"]
    vqa_hist = trainer.load_checkpoint(trainer.pretrain_vqa(cfg), "vqa")["extra"]["history"]
    rows = []
    for seed in SEEDS:
        for variant in ("baseline", "adapted"):
            run_cfg = cfg.replace(seed=seed, variant=variant, output=str(root / f"{variant}_seed{seed}"))
            result = trainer.train(run_cfg)
            best = trainer.select_best_checkpoint(result.checkpoints)
            report = trainer.load_checkpoint(Path(best.path), "gan")["extra"]["eval"]
            rows.append({"seed": seed, "variant": variant, "best_epoch": best.epoch, **report,
                         "d_acc_after_warmup": _mean_d_acc(result.metrics_path, cfg.warmup_epochs),
                         "finite": _finite_losses(result.metrics_path),
                         "conditioning_gap": _conditioning_gap(Path(best.path), run_cfg)})
    return {"config": cfg.to_dict(), "damsm_history": damsm_hist, "vqa_history": vqa_hist, "rows": rows,
            "seconds": time.perf_counter() - start}


def test_criterion_6_desk_training(verdict, tmp_path_factory):
    with verdict(6, "desk-scale training: pretraining, stability, adapted beats baseline on VQA acc and FID", 1800):
        desk = run_desk(tmp_path_factory.mktemp("desk"))
        OUT.mkdir(parents=True, exist_ok=True)
        (OUT / "desk_summary.json").write_text(json.dumps(desk, indent=1, sort_keys=True) + "\n")
        plotting.plot_variant_comparison(desk["rows"], OUT / "desk_comparison.png",
                                         ("fid", "vqa_acc_consensus", "is_mean", "r_precision"))
        rows = {(r["seed"], r["variant"]): r for r in desk["rows"]}
        lines = ["seed variant  epoch   FID      IS    R-prec  VQA-acc  D-acc  cond-gap"]
        for (seed, variant), r in sorted(rows.items()):
            lines.append(f"{seed:>4} {variant:<8} {r['best_epoch']:>5} {r['fid']:8.1f} {r['is_mean']:6.3f} "
                         f"{r['r_precision']:6.3f} {r['vqa_acc_consensus']:8.4f} {r['d_acc_after_warmup']:6.3f} "
                         f"{r['conditioning_gap']:8.4f}")
        (OUT / "desk_table.txt").write_text("\n".join(lines) + "\n")
        print("\n".join(lines))

        # (i) pretraining
        damsm, vqa = desk["damsm_history"], desk["vqa_history"]
        assert damsm[-1]["heldout"] < damsm[0]["heldout"], "DAMSM held-out loss did not decrease"
        assert vqa[-1]["loss"] < vqa[0]["loss"], "VQA validation loss did not decrease"
        assert vqa[-1]["accuracy"] >= 5 * vqa[-1]["chance"], "VQA validation accuracy below 5x chance"
        # (ii) stability of every run; the discriminator neither collapses nor saturates
        for r in rows.values():
            assert r["finite"], f"non-finite loss in {r['variant']} seed {r['seed']}"
            assert 0.5 < r["d_acc_after_warmup"] < 1.0, f"D accuracy {r['d_acc_after_warmup']:.3f}"
            assert r["conditioning_gap"] > 1e-3, "generator ignores its text condition"
        # (iii) directional comparison under identical seed and budget
        for seed in SEEDS:
            a, b = rows[seed, "adapted"], rows[seed, "baseline"]
            assert a["vqa_acc_consensus"] > b["vqa_acc_consensus"], f"seed {seed}: adapted VQA acc not higher"
        fid_wins = sum(rows[s, "adapted"]["fid"] <= rows[s, "baseline"]["fid"] for s in SEEDS)
        assert fid_wins >= 2, f"FID(adapted) <= FID(baseline) in only {fid_wins} of 3 seeds"


def test_criterion_7_determinism_and_resume(verdict, tiny, tmp_path):
    with verdict(7, "bit-identical metrics log and k+m epoch resume equivalence"):
        tr.test_training_is_bit_reproducible(tiny, tmp_path / "repro")
        tr.test_resume_matches_uninterrupted(tiny, tmp_path / "resume")


def test_criterion_8_checkpoint_selection(verdict):
    with verdict(8, "select_best_checkpoint argmax and tie-break cases"):
        tr.test_select_best_argmax()
        tr.test_select_best_single_and_tie()
        tr.test_select_best_skips_unevaluated()
