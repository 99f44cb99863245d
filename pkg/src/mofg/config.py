"""Run configuration: one JSON document covering data, model, training and evaluation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import DataConfig
from .errors import ConfigError
from .fusion import Fusion
from .judge import DEFAULT_TEMPLATE, FAILURE_POLICIES
from .model import LMConfig
from .train import AdapterSetting, Schedule
from .vision import VisionConfig


@dataclass(frozen=True)
class EvalConfig:
    judge: str = "keyword"
    endpoint: str | None = None
    timeout: float = 10.0
    failure_policy: str = "abort"
    max_in_flight: int = 4
    max_new: int = 32
    prompt_template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.judge not in ("keyword", "remote"):
            raise ConfigError(f"judge must be 'keyword' or 'remote', got {self.judge!r}")
        if self.judge == "remote" and not self.endpoint:
            raise ConfigError("the remote judge needs an endpoint")
        if self.failure_policy not in FAILURE_POLICIES:
            raise ConfigError(f"failure_policy must be one of {FAILURE_POLICIES}")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    fusion: str = Fusion.SIMOF.value
    adapter_setting: str = AdapterSetting.FULL.value
    n_train: int = 2000
    n_test: int = 400
    n_captions: int = 1000
    vision: VisionConfig = field(default_factory=VisionConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    data: DataConfig = field(default_factory=DataConfig)
    schedule: Schedule = field(default_factory=Schedule)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        Fusion.parse(self.fusion)
        AdapterSetting.parse(self.adapter_setting)
        for name in ("n_train", "n_test", "n_captions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.vision.d_glo != self.lm.d_lm:
            raise ConfigError("vision.d_glo must equal lm.d_lm")
        if (self.vision.image_size, self.vision.patch_size) != (self.data.image_size, self.data.patch_size):
            raise ConfigError("data and vision image/patch sizes disagree")
        if self.schedule.seed != self.seed:
            object.__setattr__(self, "schedule", dataclasses.replace(self.schedule, seed=self.seed))

    def data_seeds(self) -> dict[str, int]:
        # distinct seeds ⇒ distinct splits; the map seed -> (3s, 3s+1, 3s+2) is injective
        return {"train": 3 * self.seed, "test": 3 * self.seed + 1, "captions": 3 * self.seed + 2}

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e.msg}") from e
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def override(self, **flat: Any) -> "RunConfig":
        """Copy with top-level (or ``section__field``) values replaced; ``None`` values are ignored."""
        d = self.to_dict()
        for key, value in flat.items():
            if value is None:
                continue
            if "__" in key:
                section, name = key.split("__", 1)
                d[section][name] = value
            else:
                d[key] = value
        return RunConfig.from_dict(d)


def _build(cls, d: Any, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in d.items():
        sub = _NESTED.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad {where}: {e}") from e


_NESTED = {
    (RunConfig, "vision"): VisionConfig,
    (RunConfig, "lm"): LMConfig,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "schedule"): Schedule,
    (RunConfig, "eval"): EvalConfig,
}
