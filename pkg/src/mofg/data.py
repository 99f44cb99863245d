"""Synthetic caption and forensic-QA datasets, and their JSONL codec.

Images are a 3x3 grid of flat coloured regions aligned to patch boundaries.
A "fake" image has one region overwritten with a pixel-scale checkerboard
(zero mean over every 2x2 block), which only a full-resolution per-patch
encoder can see.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataParseError
from .numerics import Rng

REGION_NAMES = (
    "top left", "top center", "top right",
    "middle left", "center", "middle right",
    "bottom left", "bottom center", "bottom right",
)

PALETTE = {
    "red": (0.75, 0.25, 0.25),
    "green": (0.25, 0.75, 0.25),
    "blue": (0.25, 0.25, 0.75),
    "yellow": (0.75, 0.75, 0.25),
    "cyan": (0.25, 0.75, 0.75),
    "magenta": (0.75, 0.25, 0.75),
    "gray": (0.5, 0.5, 0.5),
    "orange": (0.75, 0.5, 0.25),
    "purple": (0.5, 0.25, 0.75),
}

CAPTION_QUESTION = "Describe the image."
IMAGE_QUESTION = "Does the image look real or fake?"


def region_question(region: str) -> str:
    return f"Does the {region} region look real or fake?"


@dataclass(frozen=True)
class DataConfig:
    image_size: int = 64
    patch_size: int = 8
    regions_per_side: int = 3
    amplitude: float = 0.15
    region_question_frac: float = 0.5
    # for fake images asked about a region: chance the asked region is the corrupted one
    target_query_frac: float = 1.0
    color_jitter: float = 0.04

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError("image_size must be divisible by patch_size")
        if self.patch_size % 2:
            raise ConfigError("patch_size must be even so the checkerboard tiles patches exactly")
        if self.regions_per_side != 3:
            raise ConfigError("only the 3x3 region grid has names")
        if self.regions_per_side > self.image_size // self.patch_size:
            raise ConfigError("more regions than patches per side")
        for name in ("region_question_frac", "target_query_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.amplitude < 0:
            raise ConfigError("amplitude must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RegionGrid:
    grid: int  # patches per side
    regions: dict[str, list[int]] = field(default_factory=dict)  # name -> raster patch indices

    @classmethod
    def build(cls, patches_per_side: int, regions_per_side: int = 3) -> "RegionGrid":
        bands = np.array_split(np.arange(patches_per_side), regions_per_side)
        regions = {}
        for r, rows in enumerate(bands):
            for c, cols in enumerate(bands):
                name = REGION_NAMES[r * regions_per_side + c]
                regions[name] = sorted(int(i * patches_per_side + j) for i in rows for j in cols)
        return cls(patches_per_side, regions)

    def pixel_slices(self, name: str, patch_size: int) -> tuple[slice, slice]:
        idx = self.regions[name]
        rows = [i // self.grid for i in idx]
        cols = [i % self.grid for i in idx]
        return (slice(min(rows) * patch_size, (max(rows) + 1) * patch_size),
                slice(min(cols) * patch_size, (max(cols) + 1) * patch_size))


@dataclass
class ForensicExample:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    question: str
    answer: str
    label: str  # image-level ground truth: "real" | "fake"
    region: str | None = None  # corrupted region, present iff label == "fake"

    def __eq__(self, other) -> bool:
        return (isinstance(other, ForensicExample) and self.question == other.question
                and self.answer == other.answer and self.label == other.label
                and self.region == other.region and self.image.shape == other.image.shape
                and np.array_equal(self.image, other.image))


def _base_image(cfg: DataConfig, grid: RegionGrid, rng: Rng) -> tuple[np.ndarray, list[str]]:
    names = list(PALETTE)
    img = np.zeros((cfg.image_size, cfg.image_size, 3), dtype=np.float32)
    colors = []
    for region in REGION_NAMES:
        cname = names[int(rng.integers(len(names)))]
        rgb = np.asarray(PALETTE[cname]) + rng.uniform(3, -cfg.color_jitter, cfg.color_jitter)
        rs, cs = grid.pixel_slices(region, cfg.patch_size)
        img[rs, cs] = rgb.astype(np.float32)
        colors.append(cname)
    return img, colors


def corrupt(img: np.ndarray, region: str, cfg: DataConfig, grid: RegionGrid, rng: Rng) -> np.ndarray:
    """Overwrite ``region`` with a seeded checkerboard texture of the configured amplitude."""
    out = img.copy()
    rs, cs = grid.pixel_slices(region, cfg.patch_size)
    h, w = rs.stop - rs.start, cs.stop - cs.start
    yy, xx = np.mgrid[0:h, 0:w]
    checker = np.where((yy + xx) % 2 == 0, 1.0, -1.0)
    signs = np.where(rng.uniform(3) < 0.5, -1.0, 1.0)
    noise = cfg.amplitude * checker[..., None] * signs
    out[rs, cs] = np.clip(out[rs, cs] + noise, 0.0, 1.0).astype(np.float32)
    return out


def gen_caption_set(n: int, seed: int, cfg: DataConfig | None = None) -> list[ForensicExample]:
    cfg = cfg or DataConfig()
    if n < 1:
        raise ConfigError("caption set needs n >= 1")
    grid = RegionGrid.build(cfg.image_size // cfg.patch_size, cfg.regions_per_side)
    root = Rng(seed).split("captions")
    out = []
    for i in range(n):
        img, colors = _base_image(cfg, grid, root.split(i))
        caption = "the image shows " + " , ".join(colors[:-1]) + f" and {colors[-1]} ."
        out.append(ForensicExample(img, CAPTION_QUESTION, caption, "real", None))
    return out


def forensic_answer(label: str, corrupted: str | None, asked: str | None) -> str:
    if asked is None:
        if label == "real":
            return "the image looks real ."
        return f"the image looks fake . the {corrupted} region has unnatural texture ."
    if asked == corrupted:
        return f"the {asked} region looks fake . it has unnatural texture ."
    return f"the {asked} region looks real ."


def gen_forensic_set(n: int, seed: int, cfg: DataConfig | None = None) -> list[ForensicExample]:
    """Balanced real/fake QA examples; ``n // 2`` are fake."""
    cfg = cfg or DataConfig()
    if n < 1:
        raise ConfigError("forensic set needs n >= 1")
    grid = RegionGrid.build(cfg.image_size // cfg.patch_size, cfg.regions_per_side)
    root = Rng(seed).split("forensic")
    fake_flags = np.zeros(n, dtype=bool)
    fake_flags[root.split("labels").permutation(n)[: n // 2]] = True
    out = []
    for i in range(n):
        rng = root.split(i)
        img, _ = _base_image(cfg, grid, rng.split("image"))
        corrupted = None
        label = "real"
        if fake_flags[i]:
            label = "fake"
            corrupted = REGION_NAMES[int(rng.integers(len(REGION_NAMES)))]
            img = corrupt(img, corrupted, cfg, grid, rng.split("noise"))
        asked = None
        if rng.uniform() < cfg.region_question_frac:
            if corrupted is not None and rng.uniform() < cfg.target_query_frac:
                asked = corrupted
            else:
                others = [r for r in REGION_NAMES if r != corrupted]
                asked = others[int(rng.integers(len(others)))]
        question = IMAGE_QUESTION if asked is None else region_question(asked)
        out.append(ForensicExample(img, question, forensic_answer(label, corrupted, asked), label, corrupted))
    return out


def stack_images(ds: Sequence[ForensicExample]) -> np.ndarray:
    return np.stack([ex.image for ex in ds]).astype(np.float32)


def _encode_image(img: np.ndarray) -> dict:
    arr = np.ascontiguousarray(img, dtype="<f4")
    return {"shape": list(arr.shape), "dtype": "float32-le", "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode_image(obj) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise ValueError("image must be an object with 'shape' and 'data'")
    shape = tuple(int(s) for s in obj["shape"])
    raw = base64.b64decode(obj["data"], validate=True)
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"image data holds {arr.size} values, shape {shape} needs {int(np.prod(shape))}")
    return arr.reshape(shape).astype(np.float32)


def example_to_json(ex: ForensicExample) -> str:
    return json.dumps({
        "image": _encode_image(ex.image),
        "question": ex.question,
        "answer": ex.answer,
        "label": ex.label,
        "region": ex.region,
    }, sort_keys=True)


def save_jsonl(ds: Iterable[ForensicExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in ds:
            fh.write(example_to_json(ex) + "\n")


def load_jsonl(path: str | Path) -> list[ForensicExample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataParseError(lineno, f"invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise DataParseError(lineno, "expected a JSON object")
            for key in ("image", "question", "answer", "label"):
                if key not in obj:
                    raise DataParseError(lineno, f"missing field {key!r}")
            if obj["label"] not in ("real", "fake"):
                raise DataParseError(lineno, f"label must be 'real' or 'fake', got {obj['label']!r}")
            try:
                img = _decode_image(obj["image"])
            except (ValueError, TypeError) as e:
                raise DataParseError(lineno, f"bad image: {e}") from None
            out.append(ForensicExample(img, str(obj["question"]), str(obj["answer"]), obj["label"], obj.get("region")))
    return out
