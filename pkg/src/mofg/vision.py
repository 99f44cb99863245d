"""Toy visual towers: a global (patch-mixing) encoder and a local per-patch encoder.

Both are randomly initialised from a seed and kept frozen; they only have to
behave like their pretrained counterparts structurally. The global encoder
views each patch at reduced resolution and then mixes all tokens together,
so pixel-scale texture is invisible to it. The local encoder maps each patch
independently at full resolution.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .numerics import DEFAULT_DTYPE, Rng, init_tensor, masked_attention


@dataclass(frozen=True)
class VisionConfig:
    image_size: int = 64
    patch_size: int = 8
    d_glo: int = 64
    d_loc: int = 48
    mixing_depth: int = 2
    global_pool: int = 2  # pixel pooling factor of the global patch embedding
    detail_gain: float = 10.0  # local encoder gain on within-patch variation

    def __post_init__(self):
        if self.patch_size <= 0 or self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}"
            )
        if self.global_pool <= 0 or self.patch_size % self.global_pool:
            raise ConfigError("patch_size must be divisible by global_pool")
        if self.mixing_depth < 0:
            raise ConfigError("mixing_depth must be >= 0")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.grid**2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    def to_dict(self) -> dict:
        return asdict(self)


def _as_batch(img) -> tuple[torch.Tensor, bool]:
    t = torch.as_tensor(np.asarray(img) if not isinstance(img, torch.Tensor) else img)
    if t.dim() == 3:
        return t.unsqueeze(0), True
    if t.dim() != 4 or t.shape[-1] != 3:
        raise ConfigError(f"expected (H, W, 3) or (B, H, W, 3) image, got {tuple(t.shape)}")
    return t, False


def patchify(img, p: int) -> torch.Tensor:
    """Split an image into non-overlapping ``p x p`` patches in raster order.

    Accepts ``(H, W, 3)`` or a batch ``(B, H, W, 3)``; returns ``(N, p*p*3)``
    or ``(B, N, p*p*3)``. Each row is the patch flattened as (row, col, channel).
    """
    x, single = _as_batch(img)
    b, h, w, c = x.shape
    if h != w:
        raise ConfigError(f"image must be square, got {h}x{w}")
    if p <= 0 or h % p:
        raise ConfigError(f"image side {h} is not divisible by patch size {p}")
    g = h // p
    out = x.reshape(b, g, p, g, p, c).permute(0, 1, 3, 2, 4, 5).reshape(b, g * g, p * p * c)
    return out[0] if single else out


def unpatchify(patches: torch.Tensor, p: int) -> torch.Tensor:
    """Inverse of :func:`patchify`."""
    single = patches.dim() == 2
    x = patches.unsqueeze(0) if single else patches
    b, n, _ = x.shape
    g = math.isqrt(n)
    if g * g != n:
        raise ConfigError(f"{n} patches do not form a square grid")
    img = x.reshape(b, g, g, p, p, 3).permute(0, 1, 3, 2, 4, 5).reshape(b, g * p, g * p, 3)
    return img[0] if single else img


def _token_norm(x: torch.Tensor) -> torch.Tensor:
    return F.layer_norm(x, x.shape[-1:], eps=1e-5)


class LocalEncoder(nn.Module):
    """Per-patch affine map, GELU, then per-token normalisation."""

    def __init__(self, cfg: VisionConfig, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.cfg = cfg
        d_in = cfg.patch_dim
        self.weight = nn.Parameter(init_tensor(rng.split("w"), (d_in, cfg.d_loc), 1.0 / math.sqrt(d_in), dtype))
        self.bias = nn.Parameter(init_tensor(rng.split("b"), (cfg.d_loc,), 0.5, dtype))
        self.requires_grad_(False)

    def forward(self, img) -> torch.Tensor:
        x = patchify(img, self.cfg.patch_size).to(self.weight.dtype)
        # centre pixel values so the bias alone drives a blank image
        x = x - 0.5
        # amplify within-patch detail relative to the patch's mean colour
        mean = x.unflatten(-1, (-1, 3)).mean(dim=-2, keepdim=True)
        flat_mean = mean.expand(*x.shape[:-1], self.cfg.patch_size**2, 3).flatten(-2)
        x = flat_mean + self.cfg.detail_gain * (x - flat_mean)
        h = F.gelu(x @ self.weight + self.bias)
        return _token_norm(h)


class _MixingBlock(nn.Module):
    def __init__(self, d: int, rng: Rng, dtype):
        super().__init__()
        s = 1.0 / math.sqrt(d)
        self.wq = nn.Parameter(init_tensor(rng.split("q"), (d, d), s, dtype))
        self.wk = nn.Parameter(init_tensor(rng.split("k"), (d, d), s, dtype))
        self.wv = nn.Parameter(init_tensor(rng.split("v"), (d, d), s, dtype))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[-2]
        allowed = torch.ones(n, n, dtype=torch.bool)
        h = _token_norm(x)
        return x + masked_attention(h @ self.wq, h @ self.wk, h @ self.wv, allowed)


class GlobalEncoder(nn.Module):
    """Coarse patch embedding + positional embedding + full-attention mixing."""

    def __init__(self, cfg: VisionConfig, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.cfg = cfg
        q = cfg.patch_size // cfg.global_pool
        d_in = q * q * 3
        self.weight = nn.Parameter(init_tensor(rng.split("w"), (d_in, cfg.d_glo), 1.0 / math.sqrt(d_in), dtype))
        self.bias = nn.Parameter(init_tensor(rng.split("b"), (cfg.d_glo,), 0.5, dtype))
        self.pos = nn.Parameter(init_tensor(rng.split("pos"), (cfg.n_tokens, cfg.d_glo), 0.5, dtype))
        self.blocks = nn.ModuleList(
            _MixingBlock(cfg.d_glo, rng.split("mix", i), dtype) for i in range(cfg.mixing_depth)
        )
        self.requires_grad_(False)

    def pooled_patches(self, img) -> torch.Tensor:
        x, single = _as_batch(img)
        x = x.to(self.weight.dtype)
        k = self.cfg.global_pool
        if k > 1:
            x = F.avg_pool2d(x.permute(0, 3, 1, 2), k).permute(0, 2, 3, 1)
        out = patchify(x, self.cfg.patch_size // k)
        return out[0] if single else out

    def forward(self, img) -> torch.Tensor:
        x = (self.pooled_patches(img) - 0.5) @ self.weight + self.bias + self.pos
        for blk in self.blocks:
            x = blk(x)
        return _token_norm(x)


class VisionTowers(nn.Module):
    """Both frozen encoders, built from a single seed."""

    def __init__(self, cfg: VisionConfig, seed: int, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.cfg = cfg
        rng = Rng(seed).split("vision")
        self.glo = GlobalEncoder(cfg, rng.split("global"), dtype)
        self.loc = LocalEncoder(cfg, rng.split("local"), dtype)

    @torch.no_grad()
    def encode(self, img) -> tuple[torch.Tensor, torch.Tensor]:
        return self.glo(img), self.loc(img)


def encode_global(img, enc: GlobalEncoder) -> torch.Tensor:
    return enc(img)


def encode_local(img, enc: LocalEncoder) -> torch.Tensor:
    return enc(img)
