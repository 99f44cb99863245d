import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mofg.errors import ValidationError
from mofg.text import (BOS, EOS, PAD, SEP, UNK, build_inference_sequence, build_training_sequence, build_vocab,
                       detokenize, pad_sample, split_words, tokenize)

WORDS = ["the", "image", "looks", "real", "fake", "region", "a", "b", "c", "d", "e"]


def vocab():
    return build_vocab(["does the image look real or fake ?", "the image looks fake ."] + WORDS)


def test_reserved_ids_and_sep_renders_newline():
    v = vocab()
    assert (PAD, BOS, EOS, SEP, UNK) == (0, 1, 2, 3, 4)
    assert v.word(SEP) == "\n"


def test_build_vocab_orders_by_frequency_then_lexicographic():
    v = build_vocab(["b a", "a c", "c"], max_size=7)
    assert v.tokens[5:] == ["a", "c"]  # a and c twice, b once and cut by max_size
    assert "b" not in v


def test_tokenize_unknown_and_detokenize():
    v = vocab()
    ids = tokenize("The IMAGE looks bogus.", v)
    assert ids[3] == UNK
    assert detokenize(ids + [EOS, v.id("fake")], v) == "the image looks <unk> ."
    assert detokenize([BOS, v.id("a"), SEP, PAD, v.id("b")], v) == "a b"


def test_split_words_punctuation():
    assert split_words("Real, or FAKE?") == ["real", ",", "or", "fake", "?"]


def test_training_sequence_masks_example():
    v = build_vocab(["a b c d e"])
    s = build_training_sequence("a b c", "d", v, max_len=6)
    assert s.tokens.tolist()[:4] == [v.id("a"), v.id("b"), v.id("c"), SEP]
    assert s.m_ar.tolist() == s.m_loss.tolist() == [0, 0, 0, 0, 1, 1]
    p = pad_sample(s, 8)
    assert p.m_input.tolist() == [1, 1, 1, 1, 1, 1, 0, 0]
    assert p.m_loss.tolist() == [0, 0, 0, 0, 1, 1, 0, 0]
    p.validate()


def test_truncation_keeps_question_and_sep():
    v = vocab()
    s = build_training_sequence("a b c", " ".join(["e"] * 50), v, max_len=10)
    assert s.tokens[:4].tolist() == [v.id("a"), v.id("b"), v.id("c"), SEP]
    assert s.suffix_len == 6 and s.m_loss.sum() == 6
    with pytest.raises(ValidationError):
        build_training_sequence("a b c d e a b c d", "e", v, max_len=10)
    with pytest.raises(ValidationError):
        build_training_sequence("   ", "e", v)


def test_inference_sequence():
    v = vocab()
    s = build_inference_sequence("does the image look real?", v)
    assert s.tokens[-1] == SEP
    assert not s.m_ar.any() and not s.m_loss.any() and s.m_input.all()
    t = build_inference_sequence("does the image look real?", v)
    assert np.array_equal(s.tokens, t.tokens)


@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=20),
       st.lists(st.sampled_from(WORDS), min_size=0, max_size=40), st.integers(8, 64))
def test_training_sequence_invariants(q, e, max_len):
    v = vocab()
    if len(q) + 2 > max_len:
        with pytest.raises(ValidationError):
            build_training_sequence(" ".join(q), " ".join(e), v, max_len)
        return
    s = build_training_sequence(" ".join(q), " ".join(e), v, max_len)
    s.validate()
    assert len(s.tokens) == len(s.m_ar) == len(s.m_input) == len(s.m_loss) == max_len
    assert s.m_loss.sum() == s.suffix_len > 0
    assert np.all(s.m_loss <= s.m_input)
    real = s.n_real
    assert np.array_equal(s.m_ar[:real], s.m_loss[:real])
    assert s.prefix_len == len(q)
