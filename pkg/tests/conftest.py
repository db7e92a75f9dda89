import numpy as np
import pytest
import torch

from qat2i.utils import set_deterministic

set_deterministic(1)


def central_difference_check(fn, tensor, n_coords=12, eps=1e-6, seed=0, skip_kinks=False):
    """Relative error between analytic and central-difference gradients.

    ``fn`` maps nothing to a scalar and reads ``tensor`` (a leaf). A random
    subset of coordinates is perturbed in place. With ``skip_kinks`` a
    coordinate whose forward and backward one-sided slopes disagree lies on a
    ReLU or max kink, where no derivative exists; it is replaced by the next
    sampled coordinate.
    """
    tensor.grad = None
    out = fn()
    (analytic,) = torch.autograd.grad(out, tensor)
    analytic = analytic.reshape(-1)
    flat = tensor.data.view(-1)
    order = np.random.default_rng(seed).permutation(flat.numel())
    numeric, exact = [], []
    with torch.no_grad():
        centre = out.item()
        for c in order:
            if len(numeric) == n_coords:
                break
            orig = flat[c].item()
            flat[c] = orig + eps
            plus = fn().item()
            flat[c] = orig - eps
            minus = fn().item()
            flat[c] = orig
            if skip_kinks:
                right, left = (plus - centre) / eps, (centre - minus) / eps
                if abs(right - left) > 1e-4 * max(abs(right), abs(left)) + 1e-8:
                    continue
            numeric.append((plus - minus) / (2 * eps))
            exact.append(analytic[c].item())
    numeric, exact = np.array(numeric), np.array(exact)
    scale = max(np.linalg.norm(numeric), np.linalg.norm(exact), 1e-12)
    return float(np.linalg.norm(numeric - exact) / scale), float(np.linalg.norm(exact))


@pytest.fixture
def gradcheck():
    return central_difference_check


# -- a tiny end-to-end pipeline shared by trainer and CLI tests --------------------------

TINY_KEYS = dict(canvas_size=32, base_resolution=8, vqa_image_size=32, damsm_channels=8, vqa_channels=8,
                 embedding_dim=16, hidden_dim=16, vqa_embedding_dim=16, vqa_hidden_dim=16,
                 vqa_attention_dim=16, condition_dim=8, noise_dim=16, gf_dim=4, df_dim=4, n_images=24,
                 test_fraction=0.5, batch_size=6, damsm_epochs=1, vqa_epochs=1, epochs=2, eval_samples=16,
                 is_splits=2, r_distractors=3, eval_batch=16, checkpoint_every=1, eval_every=1,
                 warmup_epochs=0)


@pytest.fixture(scope="session")
def tiny(tmp_path_factory):
    """Config for a 24-scene 32px dataset with 1-epoch pretrained encoders and VQA."""
    from qat2i import trainer
    from qat2i.config import Config
    from qat2i.data import SyntheticSceneSpec, generate_synthetic_dataset

    root = tmp_path_factory.mktemp("tiny")
    cfg = Config(dataset=str(root / "data"), damsm_checkpoint=str(root / "damsm.pt"),
                 vqa_checkpoint=str(root / "vqa.pt"), output=str(root / "run"), **TINY_KEYS)
    generate_synthetic_dataset(SyntheticSceneSpec(canvas_size=32, test_fraction=0.5), cfg.n_images, 0, root / "data")
    trainer.pretrain_damsm(cfg)
    trainer.pretrain_vqa(cfg)
    return cfg
