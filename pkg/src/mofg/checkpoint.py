"""Binary checkpoint archive.

Layout (all integers little-endian)::

    b"MOFG"  u32 version  u32 n_entries
    n_entries x { u32 name_len, name (UTF-8), u8 rank, rank x u64 dim, float32 data }
    u32 n_vocab, n_vocab x { u32 len, token (UTF-8) }
    u32 config_len, canonical JSON config

Entries are written in sorted name order so identical state always yields
identical bytes.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .errors import ConfigError, FormatError
from .fusion import Fusion
from .model import LMConfig, MoFModel
from .text import Vocab
from .vision import VisionConfig

MAGIC = b"MOFG"
VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _write_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def encode_archive(tensors: Mapping[str, torch.Tensor], vocab: Vocab, config: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(tensors)))
    for name in sorted(tensors):
        t = tensors[name].detach().cpu()
        _write_str(buf, name)
        buf.write(struct.pack("<B", t.dim()))
        for d in t.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(np.ascontiguousarray(t.numpy(), dtype="<f4").tobytes())
    buf.write(struct.pack("<I", len(vocab)))
    for tok in vocab.tokens:
        _write_str(buf, tok)
    _write_str(buf, canonical_json(config))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"invalid UTF-8 string at byte {self.pos}") from e


def decode_archive(data: bytes) -> tuple[dict[str, torch.Tensor], Vocab, dict]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, n = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(n):
        name = r.string()
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    (n_vocab,) = r.unpack("<I")
    try:
        vocab = Vocab([r.string() for _ in range(n_vocab)])
    except ConfigError as e:
        raise FormatError(f"bad vocabulary block: {e}") from e
    try:
        config = json.loads(r.string())
    except json.JSONDecodeError as e:
        raise FormatError("config block is not valid JSON") from e
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after config block")
    return tensors, vocab, config


@dataclass
class Checkpoint:
    model: MoFModel
    vocab: Vocab
    config: dict


def model_config(model: MoFModel, seed: int) -> dict:
    return {
        "vision": model.vcfg.to_dict(),
        "lm": model.lcfg.to_dict(),
        "fusion": model.fusion.value,
        "model_seed": seed,
    }


def save_checkpoint(path: str | Path, model: MoFModel, vocab: Vocab, config: dict) -> None:
    """Write ``model`` parameters, vocabulary and run config.

    ``config`` must contain the keys produced by :func:`model_config`; any
    extra keys (training configs, step counter) are stored verbatim.
    """
    tensors = {k: v for k, v in model.state_dict().items()}
    Path(path).write_bytes(encode_archive(tensors, vocab, config))


def load_checkpoint(path: str | Path, fusion: Fusion | str | None = None) -> Checkpoint:
    """Rebuild the model stored at ``path``.

    Raises:
        FormatError: malformed, truncated or unknown-version archives.
        ConfigError: ``fusion`` given and different from the saved one.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint {path}: {e}") from e
    tensors, vocab, config = decode_archive(data)
    try:
        vcfg = VisionConfig(**config["vision"])
        lcfg = LMConfig(**config["lm"])
        saved = Fusion.parse(config["fusion"])
        seed = int(config["model_seed"])
    except (KeyError, TypeError) as e:
        raise FormatError(f"checkpoint config is incomplete: {e}") from e
    if fusion is not None and Fusion.parse(fusion) is not saved:
        raise ConfigError(f"checkpoint was trained with fusion {saved.value}, not {Fusion.parse(fusion).value}")
    model = MoFModel(vcfg, lcfg, len(vocab), saved, seed)
    expected = model.state_dict()
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise FormatError(f"checkpoint tensors do not match the model (missing {missing[:3]}, extra {extra[:3]})")
    for name, t in tensors.items():
        if tuple(t.shape) != tuple(expected[name].shape):
            raise FormatError(f"tensor {name} has shape {tuple(t.shape)}, expected {tuple(expected[name].shape)}")
    model.load_state_dict(tensors)
    for p in model.parameters():
        p.requires_grad_(False)
    model.eval()
    return Checkpoint(model, vocab, config)
