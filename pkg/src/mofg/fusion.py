"""Adapter projection and the two parameter-free mixture-of-features fusions."""

from __future__ import annotations

import enum
import math

import torch
import torch.nn as nn

from .errors import ConfigError, DimensionError
from .numerics import DEFAULT_DTYPE, Rng, init_tensor


class Fusion(str, enum.Enum):
    SIMOF = "simof"  # interleaved global/adapted-local tokens
    CMOF = "cmof"  # all global tokens, then all adapted-local tokens
    GLOBAL_ONLY = "global_only"
    LOCAL_ONLY = "local_only"

    @classmethod
    def parse(cls, value: "str | Fusion") -> "Fusion":
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown fusion strategy {value!r} (expected one of {names})") from None

    def uses_adapter(self) -> bool:
        return self is not Fusion.GLOBAL_ONLY

    def n_visual(self, n_tokens: int) -> int:
        return 2 * n_tokens if self in (Fusion.SIMOF, Fusion.CMOF) else n_tokens


class Adapter(nn.Module):
    """Single affine layer projecting local features to the LM width."""

    def __init__(self, d_loc: int, d_lm: int, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.weight = nn.Parameter(init_tensor(rng.split("w"), (d_loc, d_lm), 1.0 / math.sqrt(d_loc), dtype))
        self.bias = nn.Parameter(torch.zeros(d_lm, dtype=dtype))

    @property
    def frozen(self) -> bool:
        return not self.weight.requires_grad

    def forward(self, f_loc: torch.Tensor) -> torch.Tensor:
        return adapt(f_loc, self.weight, self.bias)


def adapt(f_loc: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    if f_loc.shape[-1] != weight.shape[0]:
        raise DimensionError(f"local feature width {f_loc.shape[-1]} != adapter input width {weight.shape[0]}")
    return f_loc @ weight + bias


def _check_pair(f_glo: torch.Tensor, f_aloc: torch.Tensor) -> None:
    if f_glo.shape != f_aloc.shape:
        raise DimensionError(f"global {tuple(f_glo.shape)} and adapted-local {tuple(f_aloc.shape)} shapes differ")


def interleave(f_glo: torch.Tensor, f_aloc: torch.Tensor) -> torch.Tensor:
    """Alternate rows: ``out[2j] = f_glo[j]``, ``out[2j+1] = f_aloc[j]`` (0-indexed).

    Leading batch dimensions are carried through.
    """
    _check_pair(f_glo, f_aloc)
    *lead, n, d = f_glo.shape
    return torch.stack((f_glo, f_aloc), dim=-2).reshape(*lead, 2 * n, d)


def concat_fuse(f_glo: torch.Tensor, f_aloc: torch.Tensor) -> torch.Tensor:
    if f_glo.shape[-1] != f_aloc.shape[-1] or f_glo.shape[:-2] != f_aloc.shape[:-2]:
        raise DimensionError(f"cannot concatenate {tuple(f_glo.shape)} with {tuple(f_aloc.shape)}")
    if f_glo.shape[-2] != f_aloc.shape[-2]:
        raise DimensionError("global and adapted-local streams must have the same token count")
    return torch.cat((f_glo, f_aloc), dim=-2)


def deinterleave(f: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if f.shape[-2] % 2:
        raise DimensionError(f"cannot deinterleave an odd number of rows ({f.shape[-2]})")
    return f[..., 0::2, :], f[..., 1::2, :]


def fuse(strategy: Fusion, f_glo: torch.Tensor, f_aloc: torch.Tensor | None) -> torch.Tensor:
    if strategy is Fusion.SIMOF:
        return interleave(f_glo, f_aloc)
    if strategy is Fusion.CMOF:
        return concat_fuse(f_glo, f_aloc)
    if strategy is Fusion.GLOBAL_ONLY:
        return f_glo
    if strategy is Fusion.LOCAL_ONLY:
        return f_aloc
    raise ConfigError(f"unknown fusion strategy {strategy!r}")
