import json

import pytest

from mofg.errors import ValidationError
from mofg.evaluate import METRIC_KEYS, EvalPair, score_pairs


def pairs():
    return [
        EvalPair("Does the image look real or fake?", "the image looks real .", "the image looks real .", "real"),
        EvalPair("Does the image look real or fake?", "the image looks fake . the center region has unnatural "
                 "texture .", "the image looks fake . the top left region has unnatural texture .", "fake"),
        EvalPair("Does the center region look real or fake?", "the center region looks real .",
                 "the center region looks fake .", "real"),
    ]


def test_report_fields_and_bounds():
    r = score_pairs(pairs())
    assert set(r.metrics()) == set(METRIC_KEYS)
    assert r.accuracy == pytest.approx(2 / 3)
    assert 0 <= r.bleu3 <= 1 and 0 <= r.bleu4 <= 1 and 0 <= r.rouge_l <= 1 and r.cider >= 0
    assert r.n_examples == 3 and len(r.records) == 3
    d = json.loads(r.to_json())
    assert d["records"][2]["judge"] == "no"


def test_perfect_pairs():
    ps = [EvalPair(p.question, p.reference, p.reference, p.label) for p in pairs()]
    r = score_pairs(ps)
    assert r.accuracy == r.bleu4 == r.rouge_l == 1.0


def test_adding_a_perfect_pair_never_lowers_accuracy():
    base = score_pairs(pairs()).accuracy
    extra = EvalPair("q", "the image looks real .", "the image looks real .", "real")
    assert score_pairs(pairs() + [extra]).accuracy >= base


def test_empty_is_an_error():
    with pytest.raises(ValidationError):
        score_pairs([])
