"""Two-stage training (adapter alignment, then joint grounding) and ablations."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from .data import ForensicExample, stack_images
from .errors import ConfigError
from .fusion import Fusion
from .model import MoFModel
from .numerics import Rng, sgd_step
from .text import TokenizedSample, Vocab, build_training_sequence

log = logging.getLogger(__name__)

# full-scale recipe; the random-init desk LM needs a far larger step
FULL_SCALE_LR0 = 1e-4
FULL_SCALE_BATCH_SIZE = 64
DESK_LR0 = 1.0


class Stage(str, enum.Enum):
    ALIGN = "align"
    GROUND = "ground"


@dataclass(frozen=True)
class TrainConfig:
    stage: Stage = Stage.GROUND
    fusion: Fusion = Fusion.SIMOF
    adapter_frozen: bool = False
    lm_frozen: bool = False
    lr0: float = DESK_LR0
    batch_size: int = 16
    epochs: int = 5
    seed: int = 0
    max_len: int = 64
    grad_clip: float | None = 1.0

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "fusion", Fusion.parse(self.fusion))
        if self.stage is Stage.ALIGN and not self.lm_frozen:
            raise ConfigError("the align stage requires lm_frozen=True")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr0 < 0:
            raise ConfigError("lr0 must be >= 0")

    @classmethod
    def align(cls, **kw) -> "TrainConfig":
        return cls(stage=Stage.ALIGN, lm_frozen=True, **kw)

    @classmethod
    def ground(cls, **kw) -> "TrainConfig":
        return cls(stage=Stage.GROUND, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage"] = self.stage.value
        d["fusion"] = self.fusion.value
        return d


@dataclass
class EncodedSet:
    """Dataset with frozen-encoder features precomputed once."""

    f_glo: torch.Tensor  # (n, N, d_glo)
    f_loc: torch.Tensor  # (n, N, d_loc)
    samples: list[TokenizedSample]
    examples: Sequence[ForensicExample]

    def __len__(self) -> int:
        return len(self.samples)


@torch.no_grad()
def encode_dataset(model: MoFModel, ds: Sequence[ForensicExample], vocab: Vocab, max_len: int = 64,
                   chunk: int = 256) -> EncodedSet:
    imgs = stack_images(ds) if len(ds) else np.zeros((0, model.vcfg.image_size, model.vcfg.image_size, 3), np.float32)
    glo, loc = [], []
    for i in range(0, len(ds), chunk):
        g, l = model.encode(torch.from_numpy(imgs[i : i + chunk]))
        glo.append(g)
        loc.append(l)
    n = model.vcfg.n_tokens
    f_glo = torch.cat(glo) if glo else torch.zeros(0, n, model.vcfg.d_glo)
    f_loc = torch.cat(loc) if loc else torch.zeros(0, n, model.vcfg.d_loc)
    samples = [build_training_sequence(ex.question, ex.answer, vocab, max_len) for ex in ds]
    return EncodedSet(f_glo, f_loc, samples, ds)


def collate(samples: Sequence[TokenizedSample]) -> dict[str, torch.Tensor]:
    """Stack samples and drop trailing all-padding columns."""
    width = max(s.n_real for s in samples)
    pick = lambda attr: torch.from_numpy(np.stack([getattr(s, attr)[:width] for s in samples]))  # noqa: E731
    return {"tokens": pick("tokens"), "m_ar": pick("m_ar"), "m_input": pick("m_input"), "m_loss": pick("m_loss")}


def frozen_names(model: MoFModel, cfg: TrainConfig) -> set[str]:
    out = set()
    for name, _ in model.named_parameters():
        if name.startswith("vision."):
            out.add(name)
        elif name.startswith("adapter.") and (cfg.adapter_frozen or not model.fusion.uses_adapter()):
            out.add(name)
        elif name.startswith("lm.") and cfg.lm_frozen:
            out.add(name)
    return out


@dataclass
class StageResult:
    losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    steps: int = 0


def train_stage(model: MoFModel, data: EncodedSet, cfg: TrainConfig) -> StageResult:
    """Run one stage of minibatch SGD with a cosine schedule spanning the stage."""
    if len(data) == 0:
        raise ConfigError("training dataset is empty")
    if model.fusion is not cfg.fusion:
        raise ConfigError(f"model fusion {model.fusion.value} != config fusion {cfg.fusion.value}")
    frozen = frozen_names(model, cfg)
    params = dict(model.named_parameters())
    for name, p in params.items():
        p.requires_grad_(name not in frozen)
    trainable = {k: v for k, v in params.items() if k not in frozen}

    n = len(data)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    order_rng = Rng(cfg.seed).split("order", cfg.stage.value)
    result = StageResult()
    model.train()
    step = 0
    for epoch in range(cfg.epochs):
        perm = order_rng.split(epoch).permutation(n)
        epoch_sum = 0.0
        for s in range(steps_per_epoch):
            idx = torch.from_numpy(np.sort(perm[s * cfg.batch_size : (s + 1) * cfg.batch_size]))
            batch = collate([data.samples[i] for i in idx.tolist()])
            for p in trainable.values():
                p.grad = None
            out = model(data.f_glo[idx], data.f_loc[idx], batch["tokens"], batch["m_ar"], batch["m_input"],
                        batch["m_loss"])
            loss = out.loss
            if trainable:
                loss.backward()
                if cfg.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(list(trainable.values()), cfg.grad_clip)
                grads = {k: p.grad for k, p in trainable.items()}
                sgd_step(trainable, grads, step, total, cfg.lr0)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at step {step}")
            result.losses.append(value)
            epoch_sum += value
            step += 1
        result.epoch_losses.append(epoch_sum / steps_per_epoch)
        log.info("%s epoch %d/%d loss %.4f", cfg.stage.value, epoch + 1, cfg.epochs, result.epoch_losses[-1])
    result.steps = step
    for p in params.values():
        p.requires_grad_(False)
    model.eval()
    return result


class AdapterSetting(str, enum.Enum):
    FULL = "full"  # caption alignment, then joint grounding
    JOINT_ONLY = "joint_only"  # joint grounding only
    NO_REFINE = "no_refine"  # caption alignment, then grounding with the adapter frozen
    NO_PREALIGN = "no_prealign"  # adapter aligned on forensic data only, then frozen

    @classmethod
    def parse(cls, value) -> "AdapterSetting":
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown adapter setting {value!r} (expected one of {names})") from None


@dataclass(frozen=True)
class Schedule:
    """Hyperparameters shared by both stages."""

    lr0: float = DESK_LR0
    batch_size: int = 16
    epochs: int = 5
    seed: int = 0
    max_len: int = 64
    grad_clip: float | None = 1.0

    def stage_config(self, stage: Stage, fusion: Fusion, adapter_frozen: bool = False) -> TrainConfig:
        kw = dict(fusion=fusion, lr0=self.lr0, batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
                  max_len=self.max_len, grad_clip=self.grad_clip, adapter_frozen=adapter_frozen)
        if stage is Stage.ALIGN:
            return TrainConfig.align(**kw)
        return TrainConfig.ground(**kw)


def stage1_align(model: MoFModel, captions: EncodedSet, cfg: TrainConfig) -> StageResult:
    """Train the adapter alone against the frozen LM."""
    if cfg.stage is not Stage.ALIGN:
        raise ConfigError("stage1_align needs an align-stage config")
    return train_stage(model, captions, cfg)


def stage2_ground(model: MoFModel, forensic: EncodedSet, cfg: TrainConfig) -> StageResult:
    """Train adapter (unless frozen) and LM jointly on forensic QA."""
    if cfg.stage is not Stage.GROUND:
        raise ConfigError("stage2_ground needs a ground-stage config")
    return train_stage(model, forensic, cfg)


@dataclass
class ProtocolResult:
    align: StageResult | None
    ground: StageResult


def train_protocol(model: MoFModel, setting: AdapterSetting | str, schedule: Schedule,
                   forensic: EncodedSet, captions: EncodedSet | None = None,
                   after_align=None) -> ProtocolResult:
    """Run the stage sequence an adapter setting calls for.

    ``after_align`` (optional callable) is invoked with the model between the
    two stages, e.g. to snapshot it.
    """
    setting = AdapterSetting.parse(setting)
    fusion = model.fusion
    align_data = None
    if setting in (AdapterSetting.FULL, AdapterSetting.NO_REFINE):
        if captions is None or len(captions) == 0:
            raise ConfigError(f"setting {setting.value} needs a caption dataset")
        align_data = captions
    elif setting is AdapterSetting.NO_PREALIGN:
        align_data = forensic
    align = None
    if align_data is not None and fusion.uses_adapter():
        align = stage1_align(model, align_data, schedule.stage_config(Stage.ALIGN, fusion))
    elif align_data is not None:
        log.info("fusion %s has no adapter; skipping the align stage", fusion.value)
    if after_align is not None:
        after_align(model)
    frozen = setting in (AdapterSetting.NO_REFINE, AdapterSetting.NO_PREALIGN)
    ground = stage2_ground(model, forensic, schedule.stage_config(Stage.GROUND, fusion, adapter_frozen=frozen))
    return ProtocolResult(align, ground)
