"""Judges deciding whether a prediction reaches the same verdict as the reference.

The keyword judge is offline and deterministic. The remote judge POSTs a
filled prompt to an HTTP endpoint and expects ``{"verdict": "yes" | "no"}``.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import httpx

from .errors import ConfigError, TransportError
from .text import split_words

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = (
    "You are grading a deepfake explanation. Reference answer: {reference}\n"
    "Predicted answer: {hypothesis}\n"
    "Do both answers reach the same conclusion about whether the image is real or fake? "
    "Reply with yes or no."
)

FAILURE_POLICIES = ("abort", "skip-and-report")


def extract_verdict(text: str) -> str | None:
    """First "real"/"fake" keyword in ``text``; "not real" reads as fake and vice versa."""
    words = split_words(text)
    for i, w in enumerate(words):
        if w in ("real", "fake"):
            negated = i > 0 and words[i - 1] == "not"
            if negated:
                return "fake" if w == "real" else "real"
            return w
    return None


class Judge(Protocol):
    def __call__(self, hyp: str, ref: str) -> str: ...


def keyword_judge(hyp: str, ref: str) -> str:
    h, r = extract_verdict(hyp), extract_verdict(ref)
    return "yes" if h is not None and h == r else "no"


class RemoteJudge:
    """HTTP judge with a per-request timeout and exactly one retry."""

    def __init__(self, endpoint: str, prompt_template: str = DEFAULT_TEMPLATE, timeout: float = 10.0,
                 max_in_flight: int = 4, client: httpx.Client | None = None):
        if not endpoint:
            raise ConfigError("remote judge needs an endpoint URL")
        if max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        self.endpoint = endpoint
        self.prompt_template = prompt_template
        self.timeout = timeout
        self.max_in_flight = max_in_flight
        self._client = client

    def prompt(self, hyp: str, ref: str) -> str:
        return self.prompt_template.format(hypothesis=hyp, reference=ref)

    def _post(self, body: dict) -> str:
        if self._client is not None:
            r = self._client.post(self.endpoint, json=body, timeout=self.timeout)
        else:
            r = httpx.post(self.endpoint, json=body, timeout=self.timeout)
        r.raise_for_status()
        try:
            verdict = r.json()["verdict"]
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise TransportError(f"malformed judge reply: {r.text[:80]!r}") from e
        verdict = str(verdict).strip().lower()
        if verdict not in ("yes", "no"):
            raise TransportError(f"judge verdict must be yes/no, got {verdict!r}")
        return verdict

    def __call__(self, hyp: str, ref: str) -> str:
        body = {"prompt": self.prompt(hyp, ref)}
        last: Exception | None = None
        for attempt in range(2):
            try:
                return self._post(body)
            except (httpx.HTTPError, TransportError) as e:
                last = e
                log.warning("judge request failed (attempt %d): %s", attempt + 1, e)
        raise TransportError(f"judge at {self.endpoint} failed after retry: {last}") from last


@dataclass
class JudgeRecord:
    hypothesis: str
    reference: str
    verdict: str | None  # "yes" | "no" | None when the request failed
    flags: list[str] = field(default_factory=list)
    error: str | None = None


@dataclass
class JudgeOutcome:
    accuracy: float
    records: list[JudgeRecord]
    n_judged: int
    n_failed: int


def judge_accuracy(hyps: Sequence[str], refs: Sequence[str], judge: Callable[[str, str], str] = keyword_judge,
                   failure_policy: str = "abort") -> JudgeOutcome:
    """Fraction of pairs the judge answers "yes" for.

    Under ``skip-and-report`` a pair whose judge call raised is recorded with
    its error and excluded from the denominator; under ``abort`` the first
    such error propagates.
    """
    if failure_policy not in FAILURE_POLICIES:
        raise ConfigError(f"unknown failure policy {failure_policy!r}")
    if len(hyps) != len(refs):
        raise ConfigError("hypothesis and reference lists differ in length")

    def one(pair):
        hyp, ref = pair
        flags = [] if extract_verdict(hyp) is not None else ["no_verdict"]
        try:
            verdict = judge(hyp, ref)
        except TransportError as e:
            if failure_policy == "abort":
                raise
            return JudgeRecord(hyp, ref, None, flags + ["transport_error"], str(e))
        return JudgeRecord(hyp, ref, verdict, flags)

    workers = getattr(judge, "max_in_flight", 1)
    pairs = list(zip(hyps, refs))
    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, pairs))
    else:
        records = [one(p) for p in pairs]
    judged = [r for r in records if r.verdict is not None]
    # a hypothesis with no verdict keyword never counts as correct, whatever the judge said
    correct = sum(r.verdict == "yes" and "no_verdict" not in r.flags for r in judged)
    acc = correct / len(judged) if judged else 0.0
    return JudgeOutcome(acc, records, len(judged), len(records) - len(judged))
