"""Token assembly with learned prefixes and modality embeddings, and the fusion transformer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .layers import LayerNorm, Module, TransformerBlock, key_padding_bias
from .tensor import ContractError, Tensor

CONTEXT_MODES = ("keyframes", "consecutive", "none")

TEXT, IMAGE = 0, 1


@dataclass(frozen=True)
class ContextConfig:
    H: int = 3
    context_mode: str = "keyframes"

    def __post_init__(self):
        if self.context_mode not in CONTEXT_MODES:
            raise ValueError(f"context_mode must be one of {CONTEXT_MODES}, got {self.context_mode!r}")
        if self.H < 0:
            raise ValueError(f"history length must be nonnegative, got {self.H}")
        if (self.H == 0) != (self.context_mode == "none"):
            raise ValueError(f"H={self.H} is inconsistent with context_mode={self.context_mode!r}")

    @classmethod
    def for_mode(cls, mode: str, history: int = 3) -> "ContextConfig":
        return cls(0, "none") if mode == "none" else cls(history, mode)


@dataclass(frozen=True)
class Segment:
    name: str  # "prefix:<seq>", "text", "current", "context<i>"
    start: int
    stop: int

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass
class FusedSequence:
    """Tokens (B, n_total, d) with the origin of every index.

    ``attention`` holds one (B, heads, n, n) array per fusion layer when
    introspection was requested.
    """

    tokens: Tensor
    segments: list[Segment]
    valid: np.ndarray
    grid_shape: tuple[int, int]
    attention: list[np.ndarray] = field(default_factory=list)

    @property
    def n_total(self) -> int:
        return self.tokens.shape[1]

    def segment(self, name: str) -> Segment:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(f"no segment {name!r}; have {[s.name for s in self.segments]}")

    def segment_table(self) -> list[str]:
        table: list[str] = []
        for s in self.segments:
            table.extend([s.name] * len(s))
        return table


class FusionTransformer(Module):
    def __init__(self, rng: np.random.Generator, d: int, heads: int, n_blocks: int,
                 history: int, mlp_ratio: int = 4, segment_tags: bool = False,
                 patch_pe: np.ndarray | None = None):
        self.segment_tags = segment_tags
        # optional fixed (n_patches, d) table re-added to every image sequence
        self._patch_pe = patch_pe
        self.prefix = Tensor(rng.normal(0.0, 0.02, (2 + history, d)), requires_grad=True)
        self.modality = Tensor(rng.normal(0.0, 0.02, (2, d)), requires_grad=True)
        self.blocks = [TransformerBlock(rng, d, heads, mlp_ratio) for _ in range(n_blocks)]
        self.ln_out = LayerNorm(d)

    @property
    def history(self) -> int:
        return self.prefix.shape[0] - 2

    def __call__(self, seq: FusedSequence, introspect: bool = False) -> FusedSequence:
        return fuse(self, seq, introspect)


def _prefix(fusion: FusionTransformer, k: int, batch: int) -> Tensor:
    d = fusion.prefix.shape[1]
    return T.reshape(T.take(fusion.prefix, [k], axis=0), (1, 1, d)) + np.zeros((batch, 1, d))


def assemble(fusion: FusionTransformer, text: Tensor, current: Tensor,
             context: Sequence[Tensor], cfg: ContextConfig,
             grid_shape: tuple[int, int], text_valid: np.ndarray | None = None) -> FusedSequence:
    """Concatenate [p_text, text, p_cur, current, p_ctx1, ctx1, …] with modality embeddings.

    All token inputs are batched (B, n, d). Context slot ``i`` gets prefix ``1 + i``.
    """
    if len(context) != cfg.H:
        raise ContractError(f"expected {cfg.H} context sequences, got {len(context)}")
    if cfg.H > fusion.history:
        raise ContractError(f"fusion module was built for H <= {fusion.history}, config has {cfg.H}")
    b = text.shape[0]
    mod_text = T.take(fusion.modality, TEXT, axis=0)
    mod_img = T.take(fusion.modality, IMAGE, axis=0)

    parts: list[Tensor] = []
    segments: list[Segment] = []
    valid_parts: list[np.ndarray] = []
    pos = 0

    def push(name: str, toks: Tensor, valid: np.ndarray | None = None):
        nonlocal pos
        n = toks.shape[1]
        parts.append(toks)
        segments.append(Segment(name, pos, pos + n))
        valid_parts.append(np.ones((b, n), bool) if valid is None else valid)
        pos += n

    def tag(k: int) -> Tensor | float:
        # with segment tags every token also carries its sequence's prefix vector
        return T.take(fusion.prefix, k, axis=0) if fusion.segment_tags else 0.0

    push("prefix:text", _prefix(fusion, 0, b))
    push("text", text + mod_text + tag(0), text_valid)
    push("prefix:current", _prefix(fusion, 1, b))
    pe = 0.0 if fusion._patch_pe is None else fusion._patch_pe
    push("current", current + mod_img + tag(1) + pe)
    for i, ctx in enumerate(context, start=1):
        push(f"prefix:context{i}", _prefix(fusion, 1 + i, b))
        push(f"context{i}", ctx + mod_img + tag(1 + i) + pe)
    return FusedSequence(T.concat(parts, axis=1), segments,
                         np.concatenate(valid_parts, axis=1), grid_shape)


def fuse(fusion: FusionTransformer, seq: FusedSequence, introspect: bool = False) -> FusedSequence:
    """Full (unmasked apart from text padding) self-attention over the assembled tokens."""
    keep: list | None = [] if introspect else None
    bias = None if seq.valid.all() else key_padding_bias(seq.valid)
    x = seq.tokens
    for blk in fusion.blocks:
        x = blk(x, bias, keep)
    return FusedSequence(fusion.ln_out(x), seq.segments, seq.valid, seq.grid_shape, keep or [])


def fuse_current(fusion: FusionTransformer, seq: FusedSequence) -> Tensor:
    """Fused current-observation grid (B, gh, gw, d) without the full output.

    Equal to ``extract_current(fuse(...))``: the last block only computes the
    query rows of the current observation, since nothing else reaches the heads.
    """
    seg = seq.segment("current")
    bias = None if seq.valid.all() else key_padding_bias(seq.valid)
    x = seq.tokens
    for blk in fusion.blocks[:-1]:
        x = blk(x, bias)
    if fusion.blocks:
        x = fusion.blocks[-1](x, bias, queries=slice(seg.start, seg.stop))
    else:
        x = T.getitem(x, (slice(None), slice(seg.start, seg.stop)))
    x = fusion.ln_out(x)
    gh, gw = seq.grid_shape
    return T.reshape(x, (x.shape[0], gh, gw, x.shape[2]))


def extract_current(seq: FusedSequence) -> Tensor:
    """Current-observation tokens reshaped to (B, gh, gw, d)."""
    if not seq.segments:
        raise ContractError("fused sequence carries no segment table")
    seg = seq.segment("current")
    gh, gw = seq.grid_shape
    if len(seg) != gh * gw:
        raise ContractError(f"current segment has {len(seg)} tokens, grid is {gh}x{gw}")
    rows = T.getitem(seq.tokens, (slice(None), slice(seg.start, seg.stop)))
    return T.reshape(rows, (rows.shape[0], gh, gw, rows.shape[2]))


def scatter_current(seq: FusedSequence, grid: np.ndarray) -> np.ndarray:
    """Inverse of :func:`extract_current` on raw arrays: write grid rows back into a copy."""
    seg = seq.segment("current")
    out = seq.tokens.data.copy()
    out[:, seg.start:seg.stop] = grid.reshape(grid.shape[0], -1, grid.shape[-1])
    return out


def expected_length(text_len: int, n_patches: int, H: int) -> int:
    return (1 + text_len) + (1 + n_patches) + H * (1 + n_patches)
