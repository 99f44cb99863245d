"""Word-level tokenizer and prefix/separator/suffix sequence construction."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ValidationError

PAD, BOS, EOS, SEP, UNK = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<bos>", "<eos>", "\n", "<unk>")

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Lowercase and split into words and single punctuation marks."""
    return _WORD_RE.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(split_words(text))


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ConfigError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary contains duplicate tokens")
        self.tokens: list[str] = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def id(self, word: str) -> int:
        return self.index.get(word, UNK)

    def word(self, idx: int) -> str:
        return self.tokens[idx]


def build_vocab(corpus: Iterable[str], max_size: int = 512) -> Vocab:
    """Frequency-ordered vocabulary (ties broken lexicographically).

    ``max_size`` counts the reserved tokens.
    """
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        counts.update(split_words(doc))
    if n_docs == 0:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    if max_size < len(RESERVED):
        raise ConfigError(f"max_size must be at least {len(RESERVED)}")
    words = sorted((w for w in counts if w not in RESERVED), key=lambda w: (-counts[w], w))
    return Vocab(list(RESERVED) + words[: max_size - len(RESERVED)])


def tokenize(text: str, vocab: Vocab) -> list[int]:
    return [vocab.id(w) for w in split_words(text)]


def detokenize(ids: Iterable[int], vocab: Vocab) -> str:
    words = []
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i in (PAD, BOS, SEP):
            continue
        words.append(vocab.word(i))
    return " ".join(words)


@dataclass
class TokenizedSample:
    tokens: np.ndarray
    m_ar: np.ndarray
    m_input: np.ndarray
    m_loss: np.ndarray
    prefix_len: int
    sep_len: int
    suffix_len: int

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def n_real(self) -> int:
        return self.prefix_len + self.sep_len + self.suffix_len

    def validate(self) -> None:
        n = len(self.tokens)
        if not (len(self.m_ar) == len(self.m_input) == len(self.m_loss) == n):
            raise ValidationError("token and mask lengths differ")
        full = self.prefix_len + self.sep_len
        real = self.n_real
        if real > n:
            raise ValidationError("declared lengths exceed the sequence")
        expect_causal = np.zeros(n, dtype=np.int8)
        expect_causal[full:real] = 1
        expect_input = np.zeros(n, dtype=np.int8)
        expect_input[:real] = 1
        if not np.array_equal(self.m_ar, expect_causal):
            raise ValidationError("attention mask inconsistent with prefix/suffix lengths")
        if not np.array_equal(self.m_input, expect_input):
            raise ValidationError("input mask inconsistent with padding")
        if np.any(self.m_loss > self.m_input) or np.any(self.m_loss > self.m_ar):
            raise ValidationError("loss mask set outside causal, non-padding positions")


def _masks(prefix: int, sep: int, suffix: int, total: int):
    real = prefix + sep + suffix
    m_ar = np.zeros(total, dtype=np.int8)
    m_ar[prefix + sep : real] = 1
    m_input = np.zeros(total, dtype=np.int8)
    m_input[:real] = 1
    return m_ar, m_input, m_ar.copy()


def build_training_sequence(question: str, answer: str, vocab: Vocab, max_len: int = 64) -> TokenizedSample:
    """``tau(Q) || SEP || tau(E) || EOS``, tail-truncated and right-padded to ``max_len``."""
    prefix = tokenize(question, vocab)
    if not prefix:
        raise ValidationError("question tokenizes to an empty sequence")
    suffix = tokenize(answer, vocab) + [EOS]
    room = max_len - len(prefix) - 1
    if room < 1:
        raise ValidationError(f"question of {len(prefix)} tokens leaves no room for an answer in max_len={max_len}")
    suffix = suffix[:room]
    ids = prefix + [SEP] + suffix
    tokens = np.full(max_len, PAD, dtype=np.int64)
    tokens[: len(ids)] = ids
    m_ar, m_input, m_loss = _masks(len(prefix), 1, len(suffix), max_len)
    return TokenizedSample(tokens, m_ar, m_input, m_loss, len(prefix), 1, len(suffix))


def build_inference_sequence(question: str, vocab: Vocab) -> TokenizedSample:
    prefix = tokenize(question, vocab)
    if not prefix:
        raise ValidationError("question tokenizes to an empty sequence")
    ids = np.array(prefix + [SEP], dtype=np.int64)
    m_ar, m_input, m_loss = _masks(len(prefix), 1, 0, len(ids))
    return TokenizedSample(ids, m_ar, m_input, m_loss, len(prefix), 1, 0)


def pad_sample(s: TokenizedSample, length: int) -> TokenizedSample:
    """Right-pad (never truncate) a sample to ``length``."""
    n = len(s)
    if length < s.n_real:
        raise ValidationError("cannot pad below the real length")
    out = []
    for arr in (s.tokens, s.m_ar, s.m_input, s.m_loss):
        a = np.zeros(length, dtype=arr.dtype)
        k = min(n, length)
        a[:k] = arr[:k]
        out.append(a)
    return TokenizedSample(*out, s.prefix_len, s.sep_len, s.suffix_len)
