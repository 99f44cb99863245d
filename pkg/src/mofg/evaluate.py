"""Generate answers for a test split and score them."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .data import ForensicExample, stack_images
from .errors import ValidationError
from .judge import judge_accuracy, keyword_judge
from .metrics import bleu_n, cider_scores, corpus_bleu, rouge_l
from .model import MoFModel, greedy_decode
from .text import Vocab, build_inference_sequence, detokenize

METRIC_KEYS = ("accuracy", "bleu3", "bleu4", "rouge_l", "cider")


@dataclass
class EvalPair:
    question: str
    reference: str
    hypothesis: str
    label: str

    def __post_init__(self):
        if not self.reference.strip():
            raise ValidationError("reference must be nonempty")


@dataclass
class EvalReport:
    accuracy: float
    bleu3: float
    bleu4: float
    rouge_l: float
    cider: float
    n_examples: int
    records: list[dict] = field(default_factory=list)
    n_judge_failures: int = 0

    def metrics(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_KEYS}

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def score_pairs(pairs: Sequence[EvalPair], judge: Callable[[str, str], str] = keyword_judge,
                failure_policy: str = "abort") -> EvalReport:
    if not pairs:
        raise ValidationError("cannot score an empty set of pairs")
    hyps = [p.hypothesis for p in pairs]
    refs = [p.reference for p in pairs]
    outcome = judge_accuracy(hyps, refs, judge, failure_policy)
    ciders = cider_scores(hyps, refs)
    records = []
    for p, jr, c in zip(pairs, outcome.records, ciders):
        records.append({
            "question": p.question,
            "reference": p.reference,
            "hypothesis": p.hypothesis,
            "label": p.label,
            "judge": jr.verdict,
            "flags": jr.flags,
            "bleu3": bleu_n(p.hypothesis, [p.reference], 3, "add-epsilon"),
            "bleu4": bleu_n(p.hypothesis, [p.reference], 4, "add-epsilon"),
            "rouge_l": rouge_l(p.hypothesis, p.reference),
            "cider": c,
        })
    return EvalReport(
        accuracy=outcome.accuracy,
        bleu3=corpus_bleu(hyps, [[r] for r in refs], 3),
        bleu4=corpus_bleu(hyps, [[r] for r in refs], 4),
        rouge_l=float(np.mean([r["rouge_l"] for r in records])),
        cider=float(np.mean(ciders)),
        n_examples=len(pairs),
        records=records,
        n_judge_failures=outcome.n_failed,
    )


@torch.no_grad()
def generate_answers(model: MoFModel, vocab: Vocab, ds: Sequence[ForensicExample], max_new: int = 32,
                     batch_size: int = 64) -> list[str]:
    """Greedy answers for every example, batched by question length."""
    model.eval()
    if max_new <= 0:
        return [""] * len(ds)
    prefixes = [build_inference_sequence(ex.question, vocab).tokens for ex in ds]
    groups: dict[int, list[int]] = defaultdict(list)
    for i, p in enumerate(prefixes):
        groups[len(p)].append(i)
    out: list[str] = [""] * len(ds)
    images = stack_images(ds)
    for length in sorted(groups):
        idx = groups[length]
        for s in range(0, len(idx), batch_size):
            chunk = idx[s : s + batch_size]
            f_glo, f_loc = model.encode(torch.from_numpy(images[chunk]))
            pref = torch.from_numpy(np.stack([prefixes[i] for i in chunk]))
            for i, ids in zip(chunk, greedy_decode(model, f_glo, f_loc, pref, max_new)):
                out[i] = detokenize(ids, vocab)
    return out


def evaluate(model: MoFModel, vocab: Vocab, ds: Sequence[ForensicExample],
             judge: Callable[[str, str], str] = keyword_judge, failure_policy: str = "abort",
             max_new: int = 32) -> EvalReport:
    if not ds:
        raise ValidationError("test set is empty")
    hyps = generate_answers(model, vocab, ds, max_new)
    pairs = [EvalPair(ex.question, ex.answer, h, ex.label) for ex, h in zip(ds, hyps)]
    return score_pairs(pairs, judge, failure_policy)
