import math

import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from qat2i.damsm import ImageEncoder, RegionFeatures, damsm_loss, matching_score, pairwise_scores
from qat2i.discriminators import Discriminators, StageDiscriminator
from qat2i.generator import (ConditioningAugmentation, ConditioningLatent, Generator, GeneratorConfig,
                             word_attention)
from qat2i.text_encoder import TextEncoder, TextEncoderConfig


# -- text encoder ---------------------------------------------------------------------

@pytest.fixture
def encoder():
    torch.manual_seed(0)
    return TextEncoder(TextEncoderConfig(vocab_size=12, embedding_dim=6, hidden_dim=4)).eval()


def test_length_one_sentence_equals_word_column(encoder):
    tokens = torch.tensor([[5, 0, 0]])
    words, sentence = encoder(tokens, torch.tensor([1]))
    assert words.shape == (1, 8, 3)
    assert torch.equal(words[0, :, 1:], torch.zeros(8, 2))
    torch.testing.assert_close(sentence[0], words[0, :, 0], rtol=0, atol=1e-7)


def test_batch_permutation_invariance(encoder):
    tokens = torch.tensor([[3, 4, 5, 6], [7, 8, 0, 0], [9, 0, 0, 0]])
    lengths = torch.tensor([4, 2, 1])
    words, sentence = encoder(tokens, lengths)
    perm = torch.tensor([2, 0, 1])
    words_p, sentence_p = encoder(tokens[perm], lengths[perm])
    torch.testing.assert_close(words_p, words[perm], rtol=0, atol=1e-6)
    torch.testing.assert_close(sentence_p, sentence[perm], rtol=0, atol=1e-6)


def test_padding_invariance(encoder):
    tokens = torch.tensor([[3, 4, 5]])
    words, sentence = encoder(tokens, torch.tensor([3]))
    padded = torch.tensor([[3, 4, 5, 0, 0]])
    words_p, sentence_p = encoder(padded, torch.tensor([3]))
    assert torch.equal(sentence_p, sentence)
    assert torch.equal(words_p[..., :3], words)
    assert torch.equal(words_p[..., 3:], torch.zeros(1, 8, 2))


def test_shape_contract_across_batch_sizes(encoder):
    for b in (1, 2, 5):
        tokens = torch.randint(1, 12, (b, 6))
        words, sentence = encoder(tokens, torch.full((b,), 6))
        assert words.shape == (b, 8, 6) and sentence.shape == (b, 8)


def test_out_of_range_token(encoder):
    with pytest.raises(ValueError, match="out of range"):
        encoder(torch.tensor([[12]]), torch.tensor([1]))


def test_gru_cell():
    enc = TextEncoder(TextEncoderConfig(10, 4, 3, cell="gru"))
    words, sentence = enc(torch.tensor([[1, 2]]), torch.tensor([2]))
    assert words.shape == (1, 6, 2) and sentence.shape == (1, 6)


def test_text_encoder_gradient(gradcheck):
    torch.manual_seed(1)
    enc = TextEncoder(TextEncoderConfig(vocab_size=9, embedding_dim=5, hidden_dim=4)).double()
    tokens = torch.tensor([[1, 2, 3, 4], [5, 6, 0, 0]])
    lengths = torch.tensor([4, 2])
    probe = torch.randn(2, 8, 4, dtype=torch.float64)

    def fn():
        words, sentence = enc(tokens, lengths)
        return (words * probe).sum() + sentence.pow(2).sum()

    err, norm = gradcheck(fn, enc.embedding.weight, n_coords=20, eps=1e-5)
    assert norm > 0 and err < 1e-4


# -- conditioning augmentation ------------------------------------------------------------

def test_kl_examples():
    zeros = torch.zeros(1, 5)
    assert float(ConditioningLatent(zeros, zeros, zeros).kl) == 0.0
    assert float(ConditioningLatent(torch.ones(1, 7), zeros[:, :1].expand(1, 7), zeros).kl) == pytest.approx(3.5)


def test_kl_matches_closed_form():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mu, lv = rng.normal(size=6), rng.normal(size=6)
        expected = 0.5 * sum(math.exp(l) + m * m - 1 - l for m, l in zip(mu, lv))
        latent = ConditioningLatent(torch.tensor(mu)[None], torch.tensor(lv)[None], torch.zeros(1, 6))
        assert abs(float(latent.kl) - expected) < 1e-9


def test_kl_non_negative():
    gen = torch.Generator().manual_seed(3)
    mu = torch.randn(10_000, 8, generator=gen, dtype=torch.float64) * 3
    lv = torch.randn(10_000, 8, generator=gen, dtype=torch.float64) * 3
    assert (ConditioningLatent(mu, lv, mu).kl >= 0).all()


def test_conditioning_augmentation_sample():
    ca = ConditioningAugmentation(8, 4)
    sentence = torch.randn(3, 8)
    eps = torch.randn(3, 4)
    latent = ca(sentence, eps=eps)
    torch.testing.assert_close(latent.sample, latent.mean + torch.exp(0.5 * latent.log_variance) * eps)
    latent.kl.sum().backward()
    assert ca.fc.weight.grad.abs().sum() > 0
    with pytest.raises(ValueError, match="non-finite"):
        ca(torch.full((1, 8), float("nan")))


# -- word attention ------------------------------------------------------------------------

def test_attention_single_valid_word():
    hidden, source = torch.randn(2, 4, 3, 3), torch.randn(2, 4, 3)
    mask = torch.tensor([[False, True, True], [False, True, True]])
    _, attn = word_attention(hidden, source, mask)
    assert torch.equal(attn[:, 0], torch.ones(2, 3, 3))


def test_attention_identical_words():
    col = torch.randn(1, 4, 1)
    _, attn = word_attention(torch.randn(1, 4, 2, 2), col.expand(1, 4, 2).contiguous())
    torch.testing.assert_close(attn, torch.full((1, 2, 2, 2), 0.5), rtol=0, atol=1e-7)


def test_attention_matches_softmax_oracle():
    rng = np.random.default_rng(4)
    h, s = rng.normal(size=(4, 2, 3)), rng.normal(size=(4, 3))
    context, attn = word_attention(torch.tensor(h)[None], torch.tensor(s)[None])
    for y in range(2):
        for x in range(3):
            scores = [sum(h[c, y, x] * s[c, t] for c in range(4)) for t in range(3)]
            z = sum(math.exp(v) for v in scores)
            weights = [math.exp(v) / z for v in scores]
            for t in range(3):
                assert abs(float(attn[0, t, y, x]) - weights[t]) < 1e-6
            for c in range(4):
                assert abs(float(context[0, c, y, x]) - sum(weights[t] * s[c, t] for t in range(3))) < 1e-6


def test_attention_rows_sum_to_one_with_mask():
    mask = torch.tensor([[False, False, True, True]])
    _, attn = word_attention(torch.randn(1, 5, 4, 4), torch.randn(1, 5, 4), mask)
    torch.testing.assert_close(attn.sum(1), torch.ones(1, 4, 4), rtol=0, atol=1e-6)
    assert (attn[:, 2:] == 0).all() and (attn >= 0).all()


def test_attention_all_masked():
    with pytest.raises(ValueError, match="fully masked"):
        word_attention(torch.randn(1, 2, 2, 2), torch.randn(1, 2, 2), torch.ones(1, 2, dtype=torch.bool))


def test_attention_gradient(gradcheck):
    hidden = torch.randn(2, 4, 3, 3, dtype=torch.float64, requires_grad=True)
    source = torch.randn(2, 4, 5, dtype=torch.float64, requires_grad=True)
    mask = torch.tensor([[False] * 5, [False, False, False, True, True]])
    probe = torch.randn(2, 4, 3, 3, dtype=torch.float64)

    def fn():
        context, attn = word_attention(hidden, source, mask)
        return (context * probe).sum() + attn[:, 1].pow(2).sum()

    for t in (hidden, source):
        err, norm = gradcheck(fn, t, n_coords=20)
        assert norm > 0 and err < 1e-5


# -- generator -----------------------------------------------------------------------------

def _tiny_generator(stage_count=2, dtype=torch.float32):
    torch.manual_seed(0)
    cfg = GeneratorConfig(text_dim=6, noise_dim=5, condition_dim=3, gf_dim=4, stage_count=stage_count,
                          base_resolution=8, residual_blocks=1)
    return Generator(cfg).to(dtype)


def _gen_inputs(b=2, dtype=torch.float32):
    gen = torch.Generator().manual_seed(1)
    return (torch.randn(b, 5, generator=gen, dtype=dtype), torch.randn(b, 6, generator=gen, dtype=dtype),
            torch.randn(b, 6, 3, generator=gen, dtype=dtype), torch.randn(b, 3, generator=gen, dtype=dtype))


def test_generator_determinism_and_range():
    g = _tiny_generator(3)
    noise, sentence, words, eps = _gen_inputs()
    a = g(noise, sentence, words, eps=eps)
    b = g(noise, sentence, words, eps=eps)
    assert [im.shape[-1] for im in a.images] == [8, 16, 32]
    for x, y in zip(a.images, b.images):
        assert torch.equal(x, y)
        assert x.abs().max() <= 1
    assert len(a.attention) == 2 and a.attention[1].shape == (2, 3, 16, 16)
    torch.testing.assert_close(a.attention[0].sum(1), torch.ones(2, 8, 8), rtol=0, atol=1e-6)


def test_generator_single_stage():
    g = _tiny_generator(1)
    noise, sentence, words, eps = _gen_inputs()
    pyramid = g(noise, sentence, words, eps=eps)
    assert len(pyramid.images) == 1 and pyramid.final.shape == (2, 3, 8, 8)


def test_generator_gradients_reach_all_inputs():
    g = _tiny_generator(2)
    noise, sentence, words, eps = (t.requires_grad_() for t in _gen_inputs())
    pyramid = g(noise, sentence, words, eps=eps)
    for image in pyramid.images:
        grads = torch.autograd.grad(image.sum(), (noise, sentence), retain_graph=True)
        assert all(gr.abs().sum() > 0 for gr in grads)
    assert torch.autograd.grad(pyramid.final.sum(), words)[0].abs().sum() > 0


def test_generator_shape_errors():
    g = _tiny_generator(2)
    noise, sentence, words, eps = _gen_inputs()
    with pytest.raises(ValueError, match="noise dim"):
        g(noise[:, :4], sentence, words)
    with pytest.raises(ValueError, match="differ"):
        g(noise[:1], sentence, words)


def test_generator_gradient(gradcheck):
    g = _tiny_generator(2, torch.float64)
    noise, sentence, words, eps = _gen_inputs(dtype=torch.float64)
    weight = g.refine[0].project.weight

    def fn():
        return g(noise, sentence, words, eps=eps).final.mean()

    err, norm = gradcheck(fn, weight, n_coords=16)
    assert norm > 0 and err < 1e-5
    err, _ = gradcheck(fn, g.init_stage.fc.weight, n_coords=16)
    assert err < 1e-5


# -- discriminators -------------------------------------------------------------------------

def test_zero_head_gives_half():
    d = StageDiscriminator(0, 16, 6, df_dim=4)
    nn.init.zeros_(d.uncond_head.weight)
    nn.init.zeros_(d.uncond_head.bias)
    out = d(torch.randn(3, 3, 16, 16), torch.randn(3, 6))
    assert torch.equal(out.uncond_prob, torch.full((3,), 0.5))
    torch.testing.assert_close(out.cond_prob, torch.sigmoid(out.cond_logit), rtol=0, atol=1e-7)


def test_unconditional_head_ignores_text():
    torch.manual_seed(0)
    d = StageDiscriminator(0, 16, 6, df_dim=4)
    image = torch.randn(2, 3, 16, 16)
    a, b = d(image, torch.randn(2, 6)), d(image, torch.randn(2, 6))
    assert torch.equal(a.uncond_logit, b.uncond_logit)
    assert not torch.allclose(a.cond_logit, b.cond_logit)
    sentence = torch.randn(2, 6, requires_grad=True)
    (g,) = torch.autograd.grad(d(image, sentence).cond_logit.sum(), sentence)
    assert g.abs().sum() > 0


def test_resolution_error_names_stage():
    d = Discriminators([8, 16, 32], 6, 4)
    with pytest.raises(ValueError, match="stage 1 discriminator expects 16x16"):
        d[1](torch.randn(1, 3, 32, 32))


def test_per_stage_independence():
    d = Discriminators([8, 16], 6, 4)
    out = d[0](torch.randn(2, 3, 8, 8), torch.randn(2, 6))
    (out.uncond_logit.sum() + out.cond_logit.sum()).backward()
    assert all(p.grad is None for p in d[1].parameters())
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in d[0].parameters())


def test_discriminator_gradient(gradcheck):
    torch.manual_seed(2)
    d = StageDiscriminator(0, 16, 6, df_dim=4).double()
    image = torch.randn(2, 3, 16, 16, dtype=torch.float64)
    sentence = torch.randn(2, 6, dtype=torch.float64)
    for head, attr in ((d.uncond_head, "uncond_logit"), (d.cond_head, "cond_logit")):
        def fn():
            return F.logsigmoid(getattr(d(image, sentence), attr)).sum()
        err, norm = gradcheck(fn, head.weight)
        assert norm > 0 and err < 1e-5
    err, _ = gradcheck(lambda: F.logsigmoid(d(image, sentence).cond_logit).sum(), d.encoder[0][0].weight)
    assert err < 1e-5


# -- DAMSM -----------------------------------------------------------------------------------

def test_constant_image_identical_regions():
    enc = ImageEncoder(8, resolution=32, channels=4, region_grid=4)
    feats = enc(torch.full((1, 3, 32, 32), 0.3))
    regions = feats.regions[0]
    assert regions.shape == (8, 16)
    assert torch.allclose(regions, regions[:, :1].expand_as(regions), atol=1e-6)


def test_image_encoder_shapes_and_errors():
    enc = ImageEncoder(8, resolution=32, channels=4, region_grid=4)
    feats = enc(torch.randn(3, 3, 32, 32))
    assert feats.regions.shape == (3, 8, 16) and feats.global_.shape == (3, 8)
    with pytest.raises(ValueError, match="32x32"):
        enc(torch.randn(1, 3, 16, 16))


def test_image_encoder_gradient(gradcheck):
    torch.manual_seed(0)
    enc = ImageEncoder(6, resolution=16, channels=3, region_grid=4).double()
    image = torch.randn(1, 3, 16, 16, dtype=torch.float64, requires_grad=True)
    probe = torch.randn(6, 16, dtype=torch.float64)

    def fn():
        f = enc(image)
        return (f.regions[0] * probe).sum() + f.global_.sum()

    err, norm = gradcheck(fn, image, n_coords=20)
    assert norm > 0 and err < 1e-5


def _score_oracle(regions, words, gamma1, gamma2, weights=None):
    """Literal scalar re-implementation; ``weights`` gives word multiplicities."""
    D, R = len(regions), len(regions[0])
    T = len(words[0])
    m = weights or [1] * T
    s = [[sum(words[d][t] * regions[d][r] for d in range(D)) for r in range(R)] for t in range(T)]
    norm = [[math.exp(s[t][r]) / sum(m[u] * math.exp(s[u][r]) for u in range(T)) for r in range(R)]
            for t in range(T)]
    total = 0.0
    for t in range(T):
        z = sum(math.exp(gamma1 * norm[t][r]) for r in range(R))
        alpha = [math.exp(gamma1 * norm[t][r]) / z for r in range(R)]
        c = [sum(alpha[r] * regions[d][r] for r in range(R)) for d in range(D)]
        w = [words[d][t] for d in range(D)]
        cos = sum(a * b for a, b in zip(c, w)) / (math.sqrt(sum(a * a for a in c)) * math.sqrt(sum(b * b for b in w)))
        total += m[t] * math.exp(gamma2 * cos)
    return math.log(total) / gamma2


def test_matching_score_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        regions, words = rng.normal(size=(4, 6)) * 0.5, rng.normal(size=(4, 3)) * 0.5
        got = float(matching_score(torch.tensor(regions), torch.tensor(words), 4.0, 5.0))
        assert abs(got - _score_oracle(regions.tolist(), words.tolist(), 4.0, 5.0)) < 1e-6


def test_duplicated_word_equals_weighted_oracle():
    rng = np.random.default_rng(1)
    regions, words = rng.normal(size=(4, 5)) * 0.5, rng.normal(size=(4, 2)) * 0.5
    dup = np.concatenate([words, words[:, :1]], axis=1)
    got = float(matching_score(torch.tensor(regions), torch.tensor(dup), 4.0, 5.0))
    assert abs(got - _score_oracle(regions.tolist(), words.tolist(), 4.0, 5.0, weights=[2, 1])) < 1e-6


def test_matching_score_word_permutation_invariance():
    regions, words = torch.randn(4, 6, dtype=torch.float64), torch.randn(4, 5, dtype=torch.float64)
    perm = torch.randperm(5)
    torch.testing.assert_close(matching_score(regions, words), matching_score(regions, words[:, perm]))


def test_matching_score_rank_one_limit():
    v = torch.randn(5, 1, dtype=torch.float64)
    regions = v * torch.rand(1, 7, dtype=torch.float64).add(0.5)
    assert float(matching_score(regions, v, 4.0, 5.0)) == pytest.approx(1.0, abs=1e-12)
    words = v.expand(5, 3)
    assert float(matching_score(regions, words, 4.0, 1e3)) == pytest.approx(1.0 + math.log(3) / 1e3, abs=1e-9)


def test_masked_words_are_ignored():
    regions, words = torch.randn(1, 4, 6), torch.randn(1, 4, 3)
    padded = torch.cat([words, torch.randn(1, 4, 2)], dim=2)
    mask = torch.tensor([[False, False, False, True, True]])
    torch.testing.assert_close(pairwise_scores(regions, padded, mask, 4, 5), pairwise_scores(regions, words, None, 4, 5))


def test_damsm_uniform_scores_give_four_ln_n():
    for n in (2, 3, 5):
        feats = RegionFeatures(torch.zeros(n, 4, 6), torch.zeros(n, 4))
        loss, _ = damsm_loss(feats, torch.randn(n, 4, 3), torch.randn(n, 4))
        assert float(loss) == pytest.approx(4 * math.log(n), abs=1e-6)


def test_damsm_saturated_loss_near_zero():
    eye = torch.eye(4)
    feats = RegionFeatures(eye[:, :, None].expand(4, 4, 3).contiguous(), eye)
    loss, _ = damsm_loss(feats, eye[:, :, None].contiguous(), eye, gamma3=200.0)
    assert 0 <= float(loss) < 1e-6


def test_damsm_batch_of_three_matches_oracle():
    rng = np.random.default_rng(2)
    regions, glob = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 4))
    words, sent = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 4))
    g3 = 10.0
    word_logits = [[g3 * _score_oracle(regions[j].tolist(), words[i].tolist(), 4.0, 5.0) for j in range(3)]
                   for i in range(3)]
    cos = lambda a, b: float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    sent_logits = [[g3 * cos(sent[i], glob[j]) for j in range(3)] for i in range(3)]

    def ce(rows):
        return sum(math.log(sum(math.exp(v) for v in row)) - row[i] for i, row in enumerate(rows)) / len(rows)

    transpose = lambda m: [list(r) for r in zip(*m)]
    expected = ce(word_logits) + ce(transpose(word_logits)) + ce(sent_logits) + ce(transpose(sent_logits))
    loss, parts = damsm_loss(RegionFeatures(torch.tensor(regions), torch.tensor(glob)),
                             torch.tensor(words), torch.tensor(sent))
    assert abs(float(loss) - expected) < 1e-6
    assert abs(float(parts["word_t2i"]) - ce(word_logits)) < 1e-6


def test_damsm_swap_identical_pairs():
    regions, glob = torch.randn(3, 4, 5), torch.randn(3, 4)
    words, sent = torch.randn(3, 4, 2), torch.randn(3, 4)
    idx = torch.tensor([0, 1, 1])
    feats = RegionFeatures(regions[idx], glob[idx])
    a, _ = damsm_loss(feats, words[idx], sent[idx])
    swap = torch.tensor([0, 2, 1])
    b, _ = damsm_loss(RegionFeatures(feats.regions[swap], feats.global_[swap]), words[idx][swap], sent[idx][swap])
    torch.testing.assert_close(a, b)


def test_damsm_same_mask_excludes_duplicate_texts():
    feats = RegionFeatures(torch.randn(3, 4, 5), torch.randn(3, 4))
    words, sent = torch.randn(3, 4, 2), torch.randn(3, 4)
    words[2], sent[2] = words[1], sent[1]
    same = torch.tensor([[1, 0, 0], [0, 1, 1], [0, 1, 1]], dtype=torch.bool)
    plain, _ = damsm_loss(feats, words, sent)
    masked, _ = damsm_loss(feats, words, sent, same=same)
    assert float(masked) < float(plain) and float(masked) >= 0


def test_damsm_batch_of_one():
    with pytest.raises(ValueError, match="contrastive loss undefined"):
        damsm_loss(RegionFeatures(torch.randn(1, 4, 5), torch.randn(1, 4)), torch.randn(1, 4, 2), torch.randn(1, 4))


def test_damsm_loss_gradient(gradcheck):
    regions = torch.randn(2, 4, 5, dtype=torch.float64, requires_grad=True)
    glob = torch.randn(2, 4, dtype=torch.float64, requires_grad=True)
    words = torch.randn(2, 4, 3, dtype=torch.float64, requires_grad=True)
    sent = torch.randn(2, 4, dtype=torch.float64)
    mask = torch.tensor([[False, False, False], [False, False, True]])

    def fn():
        return damsm_loss(RegionFeatures(regions, glob), words, sent, mask)[0]

    for t in (regions, glob, words):
        err, norm = gradcheck(fn, t, n_coords=16)
        assert norm > 0 and err < 1e-5
