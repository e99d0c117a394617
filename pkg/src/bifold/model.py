"""The full policy: encoders, context fusion and heatmap heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .decoder import HeatmapHead, HeatmapPair
from .encoders import ConfigError, ImageEncoder, TextEncoder, Vocabulary, pe_2d_table
from .fusion import (ContextConfig, FusedSequence, FusionTransformer, assemble, extract_current,
                     fuse_current)
from .layers import Module
from .lora import trainable_fraction as _fraction
from .tensor import Tensor


@dataclass(frozen=True)
class ArchConfig:
    image_size: int = 32
    patch: int = 4
    channels: int = 1
    d_model: int = 64
    heads: int = 4
    text_blocks: int = 2
    image_blocks: int = 2
    fusion_blocks: int = 2
    mlp_ratio: int = 2
    max_text_len: int = 12
    lora_rank: int = 4
    lora_alpha: float = 8.0
    segment_tags: bool = True
    decoder_taper: bool = True
    fusion_pe: bool = True

    def __post_init__(self):
        if self.d_model % 4:
            raise ConfigError(f"d_model {self.d_model} must be divisible by 4 (2D encodings)")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.image_size % self.patch:
            raise ConfigError(f"image size {self.image_size} not divisible by patch {self.patch}")
        if min(self.image_size, self.patch, self.channels, self.d_model, self.heads, self.max_text_len) <= 0:
            raise ConfigError("architecture sizes must be positive")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def n_patches(self) -> int:
        return self.grid ** 2


@dataclass
class Batch:
    """Model inputs for B samples.

    ids/valid: (B, L) token ids and validity; current: (B, C, H, W);
    context: (B, H_ctx, C, H, W).
    """

    ids: np.ndarray
    valid: np.ndarray
    current: np.ndarray
    context: np.ndarray

    @property
    def size(self) -> int:
        return self.ids.shape[0]


class Encoders(Module):
    def __init__(self, text: TextEncoder, image: ImageEncoder):
        self.text = text
        self.image = image


class PolicyModel(Module):
    def __init__(self, arch: ArchConfig, ctx: ContextConfig, vocab: Vocabulary, seed: int = 0):
        self.arch = arch
        self.ctx = ctx
        self.vocab = vocab
        self.seed = seed
        rng = np.random.default_rng(seed)
        a = arch
        self.encoders = Encoders(
            TextEncoder(rng, len(vocab), a.d_model, a.heads, a.text_blocks, a.max_text_len,
                        a.mlp_ratio, a.lora_rank, a.lora_alpha),
            ImageEncoder(rng, a.image_size, a.patch, a.channels, a.d_model, a.heads,
                         a.image_blocks, a.mlp_ratio, a.lora_rank, a.lora_alpha))
        self.fusion = FusionTransformer(rng, a.d_model, a.heads, a.fusion_blocks, ctx.H, a.mlp_ratio,
                                        a.segment_tags,
                                        pe_2d_table(a.grid, a.grid, a.d_model) if a.fusion_pe else None)
        self.pick_head = HeatmapHead(rng, a.d_model, a.patch, a.decoder_taper)
        self.place_head = HeatmapHead(rng, a.d_model, a.patch, a.decoder_taper)

    @property
    def text_encoder(self) -> TextEncoder:
        return self.encoders.text

    @property
    def image_encoder(self) -> ImageEncoder:
        return self.encoders.image

    def registry(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def encode_frames(self, frames: np.ndarray) -> Tensor:
        """Encode (M, C, H, W) frames; identical frames are encoded once."""
        m = frames.shape[0]
        flat = frames.reshape(m, -1)
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        if uniq.shape[0] == m:
            return self.image_encoder(frames)
        enc = self.image_encoder(uniq.reshape((-1,) + frames.shape[1:]))
        return T.take(enc, inverse.ravel(), axis=0)

    def assembled(self, batch: Batch) -> FusedSequence:
        b = batch.size
        h = self.ctx.H
        text = self.text_encoder(batch.ids, batch.valid)
        frames = batch.current if h == 0 else np.concatenate(
            [batch.current[:, None], batch.context[:, :h]], axis=1).reshape((-1,) + batch.current.shape[1:])
        enc = self.encode_frames(frames)
        n, d = enc.shape[1], enc.shape[2]
        enc = T.reshape(enc, (b, 1 + h, n, d))
        current = enc[:, 0]
        context = [enc[:, i] for i in range(1, 1 + h)]
        g = self.arch.grid
        return assemble(self.fusion, text, current, context, self.ctx, (g, g), batch.valid)

    def fused(self, batch: Batch, introspect: bool = False) -> FusedSequence:
        return self.fusion(self.assembled(batch), introspect)

    def forward(self, batch: Batch, introspect: bool = False):
        """Return (pick, place, fused) with pick/place (B, H, W) distributions.

        ``fused`` is the full fused sequence (with attention) only when
        ``introspect`` is set; otherwise it is None and the cheaper
        current-rows-only path is taken.
        """
        if introspect:
            fused = self.fused(batch, introspect=True)
            grid = extract_current(fused)
        else:
            fused = None
            grid = fuse_current(self.fusion, self.assembled(batch))
        return self.pick_head(grid), self.place_head(grid), fused

    def heatmaps(self, batch: Batch) -> list[HeatmapPair]:
        with T.no_grad():
            pick, place, _ = self.forward(batch)
        return [HeatmapPair(pick.data[i], place.data[i]) for i in range(batch.size)]

    def config_dict(self) -> dict:
        return {"arch": asdict(self.arch), "context": asdict(self.ctx),
                "vocabulary": list(self.vocab.words), "seed": self.seed}


def init_model(arch: ArchConfig, ctx: ContextConfig, vocab: Vocabulary, seed: int = 0) -> PolicyModel:
    """Seeded random frozen encoder bases with zero-initialized LoRA updates."""
    return PolicyModel(arch, ctx, vocab, seed)


def trainable_fraction(model: PolicyModel) -> float:
    """Trainable share of the text and image encoder parameters."""
    return _fraction(model.encoders)
