"""End-to-end pipeline variants for the fusion and adapter-training ablations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

from .data import ForensicExample
from .evaluate import EvalReport, evaluate
from .fusion import Fusion
from .judge import keyword_judge
from .model import LMConfig, MoFModel
from .text import Vocab, build_vocab
from .train import (AdapterSetting, ProtocolResult, Schedule, Stage, encode_dataset, stage2_ground,
                    train_protocol)
from .vision import VisionConfig

log = logging.getLogger(__name__)

FUSION_ROWS = (Fusion.GLOBAL_ONLY, Fusion.LOCAL_ONLY, Fusion.CMOF, Fusion.SIMOF)
ADAPTER_ROWS = (AdapterSetting.NO_PREALIGN, AdapterSetting.NO_REFINE, AdapterSetting.JOINT_ONLY, AdapterSetting.FULL)


@dataclass
class Datasets:
    captions: Sequence[ForensicExample]
    train: Sequence[ForensicExample]
    test: Sequence[ForensicExample]


def corpus_vocab(ds: Datasets, max_size: int = 512) -> Vocab:
    texts = []
    for ex in list(ds.captions) + list(ds.train):
        texts.append(ex.question)
        texts.append(ex.answer)
    return build_vocab(texts, max_size)


@dataclass
class AblationResult:
    fusion: Fusion
    setting: AdapterSetting
    report: EvalReport
    protocol: ProtocolResult | None = None
    model: MoFModel | None = field(default=None, repr=False)


def run_ablation(fusion: Fusion | str, setting: AdapterSetting | str, datasets: Datasets, seed: int = 0,
                 schedule: Schedule | None = None, vcfg: VisionConfig | None = None, lcfg: LMConfig | None = None,
                 judge: Callable[[str, str], str] = keyword_judge, vocab: Vocab | None = None,
                 keep_model: bool = False) -> AblationResult:
    """Train one pipeline variant from scratch and evaluate it on ``datasets.test``."""
    fusion = Fusion.parse(fusion)
    setting = AdapterSetting.parse(setting)
    schedule = schedule or Schedule(seed=seed)
    vocab = vocab or corpus_vocab(datasets)
    model = MoFModel(vcfg or VisionConfig(), lcfg or LMConfig(), len(vocab), fusion, seed)
    forensic = encode_dataset(model, datasets.train, vocab, schedule.max_len)
    captions = encode_dataset(model, datasets.captions, vocab, schedule.max_len) if datasets.captions else None
    protocol = train_protocol(model, setting, schedule, forensic, captions)
    report = evaluate(model, vocab, datasets.test, judge)
    return AblationResult(fusion, setting, report, protocol, model if keep_model else None)


class AblationGrid:
    """Runs both ablation tables, sharing caption-aligned adapters where settings allow."""

    def __init__(self, datasets: Datasets, seed: int = 0, schedule: Schedule | None = None,
                 vcfg: VisionConfig | None = None, lcfg: LMConfig | None = None,
                 judge: Callable[[str, str], str] = keyword_judge):
        self.datasets = datasets
        self.seed = seed
        self.schedule = schedule or Schedule(seed=seed)
        self.vcfg = vcfg or VisionConfig()
        self.lcfg = lcfg or LMConfig()
        self.judge = judge
        self.vocab = corpus_vocab(datasets)
        self._aligned: dict[Fusion, dict[str, torch.Tensor]] = {}
        self._results: dict[tuple[Fusion, AdapterSetting], AblationResult] = {}

    def _fresh(self, fusion: Fusion) -> MoFModel:
        return MoFModel(self.vcfg, self.lcfg, len(self.vocab), fusion, self.seed)

    def run(self, fusion: Fusion | str, setting: AdapterSetting | str) -> AblationResult:
        fusion, setting = Fusion.parse(fusion), AdapterSetting.parse(setting)
        key = (fusion, setting)
        if key in self._results:
            return self._results[key]
        model = self._fresh(fusion)
        sched = self.schedule
        forensic = encode_dataset(model, self.datasets.train, self.vocab, sched.max_len)
        caption_aligned = setting in (AdapterSetting.FULL, AdapterSetting.NO_REFINE)
        if caption_aligned and fusion in self._aligned:
            model.load_state_dict(self._aligned[fusion])
            frozen = setting is AdapterSetting.NO_REFINE
            ground = stage2_ground(model, forensic, sched.stage_config(Stage.GROUND, fusion, adapter_frozen=frozen))
            protocol = ProtocolResult(None, ground)
        else:
            captions = encode_dataset(model, self.datasets.captions, self.vocab, sched.max_len)

            def snapshot(m: MoFModel) -> None:
                if caption_aligned:
                    self._aligned[fusion] = {k: v.clone() for k, v in m.state_dict().items()}

            protocol = train_protocol(model, setting, sched, forensic, captions, after_align=snapshot)
        report = evaluate(model, self.vocab, self.datasets.test, self.judge)
        log.info("ablation %s/%s accuracy %.4f", fusion.value, setting.value, report.accuracy)
        result = AblationResult(fusion, setting, report, protocol)
        self._results[key] = result
        return result

    def fusion_table(self) -> list[AblationResult]:
        return [self.run(f, AdapterSetting.FULL) for f in FUSION_ROWS]

    def adapter_table(self) -> list[AblationResult]:
        return [self.run(Fusion.SIMOF, s) for s in ADAPTER_ROWS]


def format_table(rows: Sequence[AblationResult], label: str) -> str:
    head = f"{label:<14} {'accuracy':>9} {'bleu3':>7} {'bleu4':>7} {'rouge_l':>8} {'cider':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        name = r.fusion.value if label == "fusion" else r.setting.value
        m = r.report
        lines.append(f"{name:<14} {m.accuracy:>9.4f} {m.bleu3:>7.4f} {m.bleu4:>7.4f} {m.rouge_l:>8.4f} {m.cider:>7.4f}")
    return "\n".join(lines)

