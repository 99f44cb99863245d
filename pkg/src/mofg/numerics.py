"""Dense numeric primitives shared by every other module.

Everything here is a thin, explicit layer over torch so that the same code
path runs in float32 for training and float64 for gradient checking.
Randomness never touches torch's global generator: all draws go through
:class:`Rng`, a counter-based Philox stream with explicit key splitting.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping

import numpy as np
import torch

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = torch.float32
CHECK_DTYPE = torch.float64


class Rng:
    """Seeded counter-based random stream.

    Streams are derived by splitting, never by sharing state, so a child
    stream for ``("data", 3)`` is the same no matter how many draws the
    parent has made.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, *keys: int | str) -> "Rng":
        return Rng(self.seed, self.path + tuple(_key_to_int(k) for k in keys))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size=shape) * std

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int | None = None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, seq, p=None):
        return seq[int(self._gen.choice(len(seq), p=p))]


def _key_to_int(key: int | str) -> int:
    if isinstance(key, int):
        return key & 0xFFFFFFFF
    # stable across processes, unlike hash()
    h = 2166136261
    for b in key.encode("utf-8"):
        h = ((h ^ b) * 16777619) & 0xFFFFFFFF
    return h


def init_tensor(rng: Rng, shape: tuple[int, ...], std: float, dtype=DEFAULT_DTYPE) -> torch.Tensor:
    """Gaussian init drawn from ``rng`` (float64 draw, cast once)."""
    return torch.from_numpy(rng.normal(shape, std)).to(dtype)


def _as_2d(x: torch.Tensor, name: str) -> None:
    if x.dim() != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {tuple(x.shape)}")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _as_2d(a, "a")
    _as_2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return a @ b


def softmax_rows(x: torch.Tensor) -> torch.Tensor:
    """Row-wise softmax with max subtraction.

    Rows that are entirely ``-inf`` are not supported; callers guarantee at
    least one finite entry per row.
    """
    shifted = x - x.max(dim=-1, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=-1, keepdim=True)


def masked_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, allowed: torch.Tensor
) -> torch.Tensor:
    """Scaled dot-product attention restricted to ``allowed`` key positions.

    Works on any leading batch dims: ``q`` is ``(..., Lq, d)``, ``k`` and
    ``v`` are ``(..., Lk, d)``/``(..., Lk, dv)``, ``allowed`` broadcasts to
    ``(..., Lq, Lk)``.

    Raises:
        DimensionError: if feature widths or mask shape disagree.
        ContractError: if some query row has no allowed key.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape[-1]} != key width {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError("keys and values must have the same length")
    if allowed.shape[-2:] != (q.shape[-2], k.shape[-2]):
        raise DimensionError(
            f"mask shape {tuple(allowed.shape)} does not match ({q.shape[-2]}, {k.shape[-2]})"
        )
    if not bool(allowed.any(dim=-1).all()):
        raise ContractError("every query row needs at least one allowed key")
    scores = (q @ k.transpose(-2, -1)) / math.sqrt(q.shape[-1])
    scores = scores.masked_fill(~allowed, float("-inf"))
    return softmax_rows(scores) @ v


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    if total_steps <= 0:
        return lr0
    t = min(max(step, 0), total_steps)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total_steps))


@torch.no_grad()
def sgd_step(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor | None],
    step: int,
    total_steps: int,
    lr0: float,
    frozen: Iterable[str] = (),
) -> float:
    """In-place SGD update ``p -= lr(t) * g`` with cosine-annealed ``lr``.

    Tensors named in ``frozen`` (and tensors with no gradient) are left
    untouched bit-for-bit. Returns the learning rate that was applied.
    """
    frozen = set(frozen)
    lr = cosine_lr(step, total_steps, lr0)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {tuple(g.shape)}, expected {tuple(p.shape)}")
        if name in frozen or lr == 0.0:
            continue
        p.sub_(g, alpha=lr)
    return lr
