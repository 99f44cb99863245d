"""Prefix-LM over fused visual tokens plus question/answer text.

Sequence layout is ``[visual tokens || prefix || SEP || suffix || PAD...]``.
Visual and prefix+SEP positions form one bidirectional block; suffix
positions additionally see earlier suffix positions; padding sees nothing.
The logit row at text position ``i - 1`` scores token ``T[i]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionError, ValidationError
from .fusion import Adapter, Fusion, fuse
from .numerics import DEFAULT_DTYPE, Rng, init_tensor, masked_attention
from .text import EOS, TokenizedSample, Vocab, build_inference_sequence, detokenize
from .vision import VisionConfig, VisionTowers


@dataclass(frozen=True)
class LMConfig:
    d_lm: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_text_len: int = 64

    def to_dict(self) -> dict:
        return asdict(self)


class ForwardOutput(NamedTuple):
    logits: torch.Tensor  # (B, L, V), one row per text position
    loss: torch.Tensor | None


def sequence_masks(n_visual: int, m_ar: torch.Tensor, m_input: torch.Tensor):
    """Per-position (valid, full-block, causal) flags over ``[visual || text]``."""
    b = m_ar.shape[0]
    ones = torch.ones(b, n_visual, dtype=torch.bool)
    valid = torch.cat((ones, m_input.bool()), dim=1)
    causal = torch.cat((torch.zeros_like(ones), m_ar.bool()), dim=1) & valid
    full = valid & ~causal
    return valid, full, causal


def attention_from_masks(n_visual: int, m_ar: torch.Tensor, m_input: torch.Tensor) -> torch.Tensor:
    """Batched boolean ``allowed[b, i, j]`` (query i may read key j)."""
    valid, full, causal = sequence_masks(n_visual, m_ar, m_input)
    t = valid.shape[1]
    lower = torch.ones(t, t, dtype=torch.bool).tril()
    allowed = full[:, None, :] | (causal[:, :, None] & causal[:, None, :] & lower)
    return allowed & valid[:, :, None] & valid[:, None, :]


def build_attention_matrix(n_visual: int, sample: TokenizedSample) -> np.ndarray:
    sample.validate()
    m_ar = torch.as_tensor(sample.m_ar).unsqueeze(0)
    m_input = torch.as_tensor(sample.m_input).unsqueeze(0)
    return attention_from_masks(n_visual, m_ar, m_input)[0].numpy()


def masked_mean_nll(logits: torch.Tensor, tokens: torch.Tensor, m_loss: torch.Tensor) -> torch.Tensor:
    """Masked next-token cross-entropy, averaged per sample then over the batch.

    ``logits[:, i-1]`` scores ``tokens[:, i]``; only positions with
    ``m_loss[:, i] == 1`` contribute, normalised by their count.
    """
    mask = m_loss[:, 1:].to(logits.dtype)
    denom = mask.sum(dim=1)
    if bool((denom == 0).any()):
        raise ValidationError("loss requested for a sample with no supervised positions")
    logp = F.log_softmax(logits[:, :-1], dim=-1)
    tgt = logp.gather(-1, tokens[:, 1:].unsqueeze(-1)).squeeze(-1)
    per_sample = -(tgt * mask).sum(dim=1) / denom
    return per_sample.mean()


def sincos_table(n: int, d: int, dtype=DEFAULT_DTYPE) -> torch.Tensor:
    """``(n, d)`` table with sin/cos of the row index in the first ``d/2`` dims, zeros elsewhere."""
    half = d // 2
    k = half // 2
    freqs = 1.0 / (n ** (torch.arange(k, dtype=torch.float64) / k))
    ang = torch.arange(n, dtype=torch.float64)[:, None] * freqs[None, :] * (math.pi / 2)
    out = torch.zeros(n, d, dtype=torch.float64)
    out[:, :k] = torch.sin(ang)
    out[:, k : 2 * k] = torch.cos(ang)
    return out.to(dtype)


class Block(nn.Module):
    def __init__(self, cfg: LMConfig, rng: Rng, dtype):
        super().__init__()
        d, f = cfg.d_lm, cfg.d_ff
        self.n_heads = cfg.n_heads
        out_std = 1.0 / math.sqrt(d) / math.sqrt(2 * cfg.n_layers)
        self.ln1 = nn.Parameter(torch.ones(d, dtype=dtype))
        self.wq = nn.Parameter(init_tensor(rng.split("wq"), (d, d), 1.0 / math.sqrt(d), dtype))
        self.wk = nn.Parameter(init_tensor(rng.split("wk"), (d, d), 1.0 / math.sqrt(d), dtype))
        self.wv = nn.Parameter(init_tensor(rng.split("wv"), (d, d), 1.0 / math.sqrt(d), dtype))
        self.wo = nn.Parameter(init_tensor(rng.split("wo"), (d, d), out_std, dtype))
        self.ln2 = nn.Parameter(torch.ones(d, dtype=dtype))
        self.w1 = nn.Parameter(init_tensor(rng.split("w1"), (d, f), 1.0 / math.sqrt(d), dtype))
        self.b1 = nn.Parameter(torch.zeros(f, dtype=dtype))
        self.w2 = nn.Parameter(init_tensor(rng.split("w2"), (f, d), out_std * math.sqrt(d / f), dtype))
        self.b2 = nn.Parameter(torch.zeros(d, dtype=dtype))

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        return x.reshape(b, t, self.n_heads, d // self.n_heads).transpose(1, 2)

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = F.layer_norm(x, (d,), self.ln1)
        q, k, v = self._heads(h @ self.wq), self._heads(h @ self.wk), self._heads(h @ self.wv)
        a = masked_attention(q, k, v, allowed[:, None])
        x = x + a.transpose(1, 2).reshape(b, t, d) @ self.wo
        h = F.layer_norm(x, (d,), self.ln2)
        return x + F.gelu(h @ self.w1 + self.b1) @ self.w2 + self.b2


class PrefixLM(nn.Module):
    def __init__(self, cfg: LMConfig, vocab_size: int, n_visual_slots: int, rng: Rng, dtype=DEFAULT_DTYPE):
        super().__init__()
        if cfg.d_lm % cfg.n_heads:
            raise DimensionError("d_lm must be divisible by n_heads")
        self.cfg = cfg
        self.n_visual_slots = n_visual_slots
        d = cfg.d_lm
        self.tok_emb = nn.Parameter(init_tensor(rng.split("tok"), (vocab_size, d), 1.0, dtype))
        # fixed by slot index, so the order a fusion lays tokens out in is visible to the LM
        self.register_buffer("vis_pos", sincos_table(n_visual_slots, d, dtype=dtype), persistent=False)
        self.pos_emb = nn.Parameter(init_tensor(rng.split("pos"), (cfg.max_text_len, d), 1.0, dtype))
        self.blocks = nn.ModuleList(Block(cfg, rng.split("block", i), dtype) for i in range(cfg.n_layers))
        self.ln_f = nn.Parameter(torch.ones(d, dtype=dtype))
        self.head = nn.Parameter(init_tensor(rng.split("head"), (d, vocab_size), 1.0 / math.sqrt(d), dtype))

    @property
    def vocab_size(self) -> int:
        return self.tok_emb.shape[0]

    def forward(self, fused: torch.Tensor, tokens: torch.Tensor, m_ar: torch.Tensor, m_input: torch.Tensor,
                m_loss: torch.Tensor | None = None) -> ForwardOutput:
        if fused.shape[-1] != self.cfg.d_lm:
            raise DimensionError(f"fused token width {fused.shape[-1]} != d_lm {self.cfg.d_lm}")
        nv, lt = fused.shape[1], tokens.shape[1]
        if nv > self.n_visual_slots or lt > self.cfg.max_text_len:
            raise DimensionError("sequence longer than the positional table")
        vis = fused.to(self.tok_emb.dtype) + self.vis_pos[:nv]
        x = torch.cat((vis, self.tok_emb[tokens] + self.pos_emb[:lt]), dim=1)
        allowed = attention_from_masks(nv, m_ar, m_input)
        # padding rows read themselves only so softmax stays finite; nothing reads them back
        allowed = allowed | torch.eye(nv + lt, dtype=torch.bool)
        for blk in self.blocks:
            x = blk(x, allowed)
        h = F.layer_norm(x[:, nv:], (self.cfg.d_lm,), self.ln_f)
        logits = h @ self.head
        loss = masked_mean_nll(logits, tokens, m_loss) if m_loss is not None else None
        return ForwardOutput(logits, loss)


class MoFModel(nn.Module):
    """Frozen vision towers, trainable adapter, prefix-LM and a fusion choice."""

    def __init__(self, vcfg: VisionConfig, lcfg: LMConfig, vocab_size: int, fusion: Fusion | str, seed: int,
                 dtype=DEFAULT_DTYPE):
        super().__init__()
        if vcfg.d_glo != lcfg.d_lm:
            raise DimensionError("global feature width must equal d_lm")
        self.vcfg, self.lcfg = vcfg, lcfg
        self.fusion = Fusion.parse(fusion)
        rng = Rng(seed)
        self.vision = VisionTowers(vcfg, seed, dtype)
        self.adapter = Adapter(vcfg.d_loc, lcfg.d_lm, rng.split("adapter"), dtype)
        # slots for the widest fusion so every strategy has the same parameter set
        self.lm = PrefixLM(lcfg, vocab_size, 2 * vcfg.n_tokens, rng.split("lm"), dtype)

    def fused_tokens(self, f_glo: torch.Tensor, f_loc: torch.Tensor) -> torch.Tensor:
        dtype = self.adapter.weight.dtype
        f_aloc = self.adapter(f_loc.to(dtype)) if self.fusion.uses_adapter() else None
        return fuse(self.fusion, f_glo.to(dtype), f_aloc)

    def forward(self, f_glo, f_loc, tokens, m_ar, m_input, m_loss=None) -> ForwardOutput:
        return self.lm(self.fused_tokens(f_glo, f_loc), tokens, m_ar, m_input, m_loss)

    def encode(self, images) -> tuple[torch.Tensor, torch.Tensor]:
        return self.vision.encode(images)


def forward(fused: torch.Tensor, sample: TokenizedSample, lm: PrefixLM, with_loss: bool = True) -> ForwardOutput:
    """Single-sample forward pass on an already fused ``(N_vis, d_lm)`` matrix."""
    sample.validate()
    t = lambda a: torch.as_tensor(a).unsqueeze(0)  # noqa: E731
    m_loss = t(sample.m_loss) if with_loss else None
    out = lm(fused.unsqueeze(0), t(sample.tokens), t(sample.m_ar), t(sample.m_input), m_loss)
    return ForwardOutput(out.logits[0], out.loss)


@torch.no_grad()
def greedy_decode(model: MoFModel, f_glo: torch.Tensor, f_loc: torch.Tensor, prefixes: torch.Tensor,
                  max_new: int) -> list[list[int]]:
    """Greedy batch decoding for samples that share a prefix length.

    ``prefixes`` is ``(B, P)`` already ending in SEP. Each row stops at EOS
    (EOS itself is dropped) or after ``max_new`` tokens. ``argmax`` returns
    the first maximal index, so ties go to the lowest token id.
    """
    b, p = prefixes.shape
    fused = model.fused_tokens(f_glo, f_loc)
    tokens = prefixes.clone()
    done = torch.zeros(b, dtype=torch.bool)
    out: list[list[int]] = [[] for _ in range(b)]
    budget = min(max_new, model.lcfg.max_text_len - p)
    for _ in range(max(budget, 0)):
        n = tokens.shape[1]
        m_ar = torch.zeros(b, n, dtype=torch.int8)
        m_ar[:, p:] = 1
        m_input = torch.ones(b, n, dtype=torch.int8)
        logits = model.lm(fused, tokens, m_ar, m_input).logits[:, -1]
        nxt = logits.argmax(dim=-1)
        for i in range(b):
            if done[i]:
                continue
            if int(nxt[i]) == EOS:
                done[i] = True
            else:
                out[i].append(int(nxt[i]))
        if bool(done.all()):
            break
        tokens = torch.cat((tokens, nxt[:, None]), dim=1)
    return out


def generate(img, question: str, model: MoFModel, vocab: Vocab, max_new: int = 32) -> str:
    if max_new <= 0:
        return ""
    model.eval()
    f_glo, f_loc = model.encode(torch.as_tensor(np.asarray(img)).unsqueeze(0))
    sample = build_inference_sequence(question, vocab)
    ids = greedy_decode(model, f_glo, f_loc, torch.as_tensor(sample.tokens).unsqueeze(0), max_new)[0]
    return detokenize(ids, vocab)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
