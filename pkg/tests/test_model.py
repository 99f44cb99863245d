import math

import numpy as np
import pytest
import torch

from mofg.data import IMAGE_QUESTION
from mofg.errors import DimensionError, ValidationError
from mofg.fusion import Fusion
from mofg.model import (LMConfig, MoFModel, attention_from_masks, build_attention_matrix, count_parameters,
                        forward, generate, greedy_decode, masked_mean_nll)
from mofg.text import build_inference_sequence, build_training_sequence, build_vocab, pad_sample

CORPUS = ["does the image look real or fake ?", "the image looks fake . the center region has unnatural texture ."]


def make_model(tiny_vision, tiny_lm, fusion="simof", dtype=torch.float32):
    vocab = build_vocab(CORPUS)
    return MoFModel(tiny_vision, tiny_lm, len(vocab), fusion, seed=0, dtype=dtype), vocab


def test_attention_matrix_example():
    v = build_vocab(["a b"])
    s = build_training_sequence("a", "b", v, max_len=4)  # prefix 1 + SEP, suffix "b" + EOS
    m = build_attention_matrix(2, s)
    assert m[4].nonzero()[0].tolist() == [0, 1, 2, 3, 4]
    assert m[5].nonzero()[0].tolist() == [0, 1, 2, 3, 4, 5]
    assert m[:4, :4].all() and not m[:4, 4:].any()


def test_attention_inference_and_padding():
    v = build_vocab(["a b"])
    s = pad_sample(build_inference_sequence("a b", v), 6)
    m = build_attention_matrix(3, s)
    n = 3 + 3
    assert m[:n, :n].all()
    assert not m[n:].any() and not m[:, n:].any()


def test_attention_never_weaker_than_causal():
    rng = np.random.default_rng(0)
    for _ in range(50):
        nv, pre, suf, pad = (int(x) for x in rng.integers(1, 6, size=4))
        m_ar = torch.tensor([[0] * pre + [1] * suf + [0] * pad], dtype=torch.int8)
        m_in = torch.tensor([[1] * (pre + suf) + [0] * pad], dtype=torch.int8)
        a = attention_from_masks(nv, m_ar, m_in)[0]
        full = nv + pre
        i, j = a.nonzero(as_tuple=True)
        assert bool(((j <= i) | (j < full)).all())


def test_uniform_head_gives_log_vocab(tiny_vision, tiny_lm):
    model, vocab = make_model(tiny_vision, tiny_lm)
    with torch.no_grad():
        model.lm.head.zero_()
    s = build_training_sequence(IMAGE_QUESTION, "the image looks fake .", vocab, 20)
    fused = model.fused_tokens(*model.encode(np.full((16, 16, 3), 0.5, np.float32)))
    out = forward(fused, s, model.lm)
    assert out.logits.shape == (20, len(vocab))
    assert out.loss.item() == pytest.approx(math.log(len(vocab)), abs=1e-6)


def test_masked_mean_nll_is_per_sample_mean():
    logits = torch.randn(2, 5, 6, generator=torch.Generator().manual_seed(0))
    tokens = torch.tensor([[1, 2, 3, 4, 5], [1, 2, 3, 4, 5]])
    m = torch.tensor([[0, 0, 1, 1, 0], [0, 0, 0, 1, 0]])
    logp = torch.log_softmax(logits, -1)
    s0 = -(logp[0, 1, 3] + logp[0, 2, 4]) / 2
    s1 = -logp[1, 2, 4]
    assert masked_mean_nll(logits, tokens, m).item() == pytest.approx(((s0 + s1) / 2).item(), abs=1e-6)
    with pytest.raises(ValidationError):
        masked_mean_nll(logits, tokens, torch.zeros_like(m))


def test_causality(tiny_vision, tiny_lm):
    model, vocab = make_model(tiny_vision, tiny_lm)
    s = build_training_sequence(IMAGE_QUESTION, "the image looks fake .", vocab, 20)
    fused = model.fused_tokens(*model.encode(np.full((16, 16, 3), 0.3, np.float32)))
    j = s.prefix_len + 3
    s2 = build_training_sequence(IMAGE_QUESTION, "the image looks fake .", vocab, 20)
    s2.tokens[j] = vocab.id("real") if "real" in vocab else 4
    a = forward(fused, s, model.lm, with_loss=False).logits
    b = forward(fused, s2, model.lm, with_loss=False).logits
    assert torch.equal(a[:j], b[:j])
    assert not torch.equal(a[j:], b[j:])


def test_fusions_share_parameter_set(tiny_vision, tiny_lm):
    counts = {f: count_parameters(make_model(tiny_vision, tiny_lm, f)[0]) for f in Fusion}
    assert len(set(counts.values())) == 1


def test_visual_order_matters(tiny_vision, tiny_lm):
    simof, vocab = make_model(tiny_vision, tiny_lm, "simof")
    cmof, _ = make_model(tiny_vision, tiny_lm, "cmof")
    s = build_training_sequence(IMAGE_QUESTION, "the image looks real .", vocab, 20)
    img = np.random.default_rng(0).uniform(size=(16, 16, 3)).astype(np.float32)
    fs = simof.fused_tokens(*simof.encode(img))
    fc = cmof.fused_tokens(*cmof.encode(img))
    assert not torch.allclose(forward(fs, s, simof.lm).loss, forward(fc, s, cmof.lm).loss)


def test_generate_budget_and_determinism(tiny_vision, tiny_lm):
    model, vocab = make_model(tiny_vision, tiny_lm)
    img = np.full((16, 16, 3), 0.5, np.float32)
    assert generate(img, IMAGE_QUESTION, model, vocab, max_new=0) == ""
    a = generate(img, IMAGE_QUESTION, model, vocab, max_new=6)
    assert a == generate(img, IMAGE_QUESTION, model, vocab, max_new=6)
    assert len(a.split()) <= 6


def test_greedy_ties_go_to_lowest_id(tiny_vision, tiny_lm):
    model, vocab = make_model(tiny_vision, tiny_lm)
    with torch.no_grad():
        model.lm.head.zero_()  # all logits equal: argmax picks id 0 (PAD) every step
    pre = torch.as_tensor(build_inference_sequence(IMAGE_QUESTION, vocab).tokens)[None]
    f_glo, f_loc = model.encode(np.full((1, 16, 16, 3), 0.5, np.float32))
    assert greedy_decode(model, f_glo, f_loc, pre, 3) == [[0, 0, 0]]


def test_forward_width_check(tiny_vision, tiny_lm):
    model, vocab = make_model(tiny_vision, tiny_lm)
    s = build_training_sequence(IMAGE_QUESTION, "fake", vocab, 20)
    with pytest.raises(DimensionError):
        forward(torch.zeros(4, 7), s, model.lm)


def test_lm_config_default():
    assert LMConfig().d_lm == 64
