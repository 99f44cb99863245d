"""Caption-style text metrics: BLEU-n, ROUGE-L and CIDEr.

All metrics tokenize with the same lowercased word splitter as the model's
vocabulary (:func:`mofg.text.split_words`).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError, ValidationError
from .text import split_words

SMOOTHING = ("none", "add-epsilon")
_EPS = 1e-9


def ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))


def _closest_ref_len(hyp_len: int, ref_lens: Sequence[int]) -> int:
    # ties go to the shorter reference
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    return min(1.0, math.exp(1.0 - ref_len / hyp_len))


def _clipped_counts(hyp: list[str], refs: list[list[str]], k: int) -> tuple[int, int]:
    h = ngrams(hyp, k)
    best: Counter = Counter()
    for r in refs:
        best |= ngrams(r, k)
    matched = sum(min(c, best[g]) for g, c in h.items())
    return matched, max(len(hyp) - k + 1, 0)


def _geo_mean(matched: Sequence[int], totals: Sequence[int], smoothing: str) -> float:
    logs = 0.0
    for m, t in zip(matched, totals):
        if m == 0 or t == 0:
            if smoothing == "none":
                return 0.0
            p = _EPS / max(t, 1)
        else:
            p = m / t
        logs += math.log(p)
    return math.exp(logs / len(matched))


def _check_bleu_args(n: int, smoothing: str) -> None:
    if not 1 <= n <= 4:
        raise ConfigError(f"BLEU order must be in 1..4, got {n}")
    if smoothing not in SMOOTHING:
        raise ConfigError(f"unknown smoothing {smoothing!r}")


def bleu_n(hyp: str, refs: Sequence[str], n: int = 4, smoothing: str = "none") -> float:
    """Sentence BLEU with clipped k-gram precisions for k = 1..n."""
    _check_bleu_args(n, smoothing)
    if not refs:
        raise ValidationError("BLEU needs at least one reference")
    h = split_words(hyp)
    if not h:
        return 0.0
    rs = [split_words(r) for r in refs]
    matched, totals = zip(*(_clipped_counts(h, rs, k) for k in range(1, n + 1)))
    bp = brevity_penalty(len(h), _closest_ref_len(len(h), [len(r) for r in rs]))
    return bp * _geo_mean(matched, totals, smoothing)


def corpus_bleu(hyps: Sequence[str], refs: Sequence[Sequence[str]], n: int = 4, smoothing: str = "none") -> float:
    """Corpus BLEU: n-gram counts and lengths are pooled before the geometric mean."""
    _check_bleu_args(n, smoothing)
    if len(hyps) != len(refs):
        raise ValidationError("hypothesis and reference lists differ in length")
    matched = [0] * n
    totals = [0] * n
    hyp_len = ref_len = 0
    for hyp, rset in zip(hyps, refs):
        h = split_words(hyp)
        rs = [split_words(r) for r in rset]
        hyp_len += len(h)
        ref_len += _closest_ref_len(len(h), [len(r) for r in rs])
        for k in range(1, n + 1):
            m, t = _clipped_counts(h, rs, k)
            matched[k - 1] += m
            totals[k - 1] += t
    if hyp_len == 0:
        return 0.0
    return brevity_penalty(hyp_len, ref_len) * _geo_mean(matched, totals, smoothing)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: str, ref: str, beta: float = 1.2) -> float:
    r = split_words(ref)
    if not r:
        raise ValidationError("ROUGE-L needs a nonempty reference")
    h = split_words(hyp)
    if not h:
        return 0.0
    lcs = lcs_length(h, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(h), lcs / len(r)
    return (1 + beta**2) * p * rec / (rec + beta**2 * p)


@dataclass
class _CiderDoc:
    vecs: list[dict[tuple, float]]
    norms: list[float]
    length: int


def cider(hyps: Sequence[str], refs: Sequence[str], n_max: int = 4, sigma: float | None = 6.0) -> float:
    """Corpus CIDEr for single-reference pairs. Returns the mean per-pair score.

    Document frequencies come from the references. Each n-gram order gets a
    tf-idf cosine similarity, optionally damped by a Gaussian penalty on the
    hypothesis/reference length gap, and the per-order values are averaged
    and scaled by 10. Counts are not clipped.
    """
    return sum(cider_scores(hyps, refs, n_max, sigma)) / len(hyps)


def cider_scores(hyps: Sequence[str], refs: Sequence[str], n_max: int = 4, sigma: float | None = 6.0) -> list[float]:
    if len(hyps) != len(refs):
        raise ValidationError("hypothesis and reference lists differ in length")
    if not hyps:
        raise ValidationError("CIDEr needs at least one pair")
    ref_words = [split_words(r) for r in refs]
    df: Counter = Counter()
    for words in ref_words:
        for k in range(1, n_max + 1):
            df.update(ngrams(words, k).keys())
    log_n = math.log(float(len(refs)))

    def doc(words: list[str]) -> _CiderDoc:
        vecs, norms = [], []
        for k in range(1, n_max + 1):
            v = {g: c * (log_n - math.log(max(1.0, df[g]))) for g, c in ngrams(words, k).items()}
            vecs.append(v)
            norms.append(math.sqrt(sum(x * x for x in v.values())))
        return _CiderDoc(vecs, norms, len(words))

    scores = []
    for hw, rw in zip((split_words(h) for h in hyps), ref_words):
        dh, dr = doc(hw), doc(rw)
        penalty = 1.0 if sigma is None else math.exp(-((dh.length - dr.length) ** 2) / (2 * sigma**2))
        total = 0.0
        for vh, vr, nh, nr in zip(dh.vecs, dr.vecs, dh.norms, dr.norms):
            if nh == 0 or nr == 0:
                continue
            dot = sum(x * vr.get(g, 0.0) for g, x in vh.items())
            total += dot / (nh * nr) * penalty
        scores.append(10.0 * total / n_max)
    return scores
