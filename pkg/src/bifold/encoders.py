"""Text and image encoders producing token sequences, plus sinusoidal encodings."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .layers import LayerNorm, Linear, Module, TransformerBlock, key_padding_bias
from .lora import LoraLinear
from .tensor import ContractError, Tensor

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1


class ConfigError(ValueError):
    """Invalid architecture or encoding configuration."""


@dataclass(frozen=True)
class Instruction:
    raw_text: str
    token_ids: tuple[int, ...]


@dataclass
class Observation:
    """Grayscale image in [0, 1] and its binary cloth mask, both (H, W)."""

    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.image.shape != self.mask.shape:
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} differ in shape")

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return np.array_equal(self.image, other.image) and np.array_equal(self.mask, other.mask)


@dataclass
class TokenSeq:
    tokens: Tensor
    origin: str
    grid_shape: tuple[int, int] | None = None


@dataclass
class Vocabulary:
    words: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.words[:2] != [PAD, UNK]:
            self.words = [PAD, UNK] + [w for w in self.words if w not in (PAD, UNK)]
        self._index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def id(self, word: str) -> int:
        return self._index.get(word, UNK_ID)

    def word(self, idx: int) -> str:
        return self.words[idx]

    @classmethod
    def from_texts(cls, texts: Sequence[str]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for t in texts:
            for w in t.lower().split():
                seen.setdefault(w, None)
        return cls(sorted(seen))


def default_vocabulary() -> Vocabulary:
    from .foldworld import template_words

    return Vocabulary(sorted(template_words()))


def tokenize(text: str, vocab: Vocabulary | None = None) -> Instruction:
    words = text.lower().split()
    if not words:
        raise ContractError("cannot tokenize an empty instruction")
    vocab = vocab or default_vocabulary()
    return Instruction(text, tuple(vocab.id(w) for w in words))


def detokenize(instr: Instruction, vocab: Vocabulary | None = None) -> str:
    vocab = vocab or default_vocabulary()
    return " ".join(vocab.word(i) for i in instr.token_ids)


# -- positional encodings -------------------------------------------------
def _pe_table(positions: np.ndarray, dim: int) -> np.ndarray:
    if dim <= 0 or dim % 2:
        raise ConfigError(f"1D sinusoidal encoding needs a positive even width, got {dim}")
    freqs = 10000.0 ** (-np.arange(0, dim, 2) / dim)
    ang = np.asarray(positions, dtype=np.float64)[..., None] * freqs
    out = np.empty(ang.shape[:-1] + (dim,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def sinusoidal_pe_1d(position: int, dim: int) -> np.ndarray:
    """Interleaved [sin(p·w₀), cos(p·w₀), sin(p·w₁), …] with wᵢ = 10000^(−2i/dim)."""
    return _pe_table(np.asarray(position), dim)


def sinusoidal_pe_2d(row: int, col: int, dim: int) -> np.ndarray:
    """Row encoding in the first half, column encoding in the second."""
    if dim <= 0 or dim % 4:
        raise ConfigError(f"2D sinusoidal encoding needs width divisible by 4, got {dim}")
    return np.concatenate([sinusoidal_pe_1d(row, dim // 2), sinusoidal_pe_1d(col, dim // 2)])


def pe_1d_table(n: int, dim: int) -> np.ndarray:
    return _pe_table(np.arange(n), dim)


def pe_2d_table(gh: int, gw: int, dim: int) -> np.ndarray:
    """(gh·gw, dim) table in row-major patch order."""
    if dim <= 0 or dim % 4:
        raise ConfigError(f"2D sinusoidal encoding needs width divisible by 4, got {dim}")
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    return np.concatenate([_pe_table(rows.ravel(), dim // 2), _pe_table(cols.ravel(), dim // 2)], axis=1)


# -- encoders ---------------------------------------------------------------
def _adapt_attention(block: TransformerBlock, rank: int, alpha: float,
                     rng: np.random.Generator) -> None:
    block.attn.q_proj = LoraLinear.wrap(block.attn.q_proj, rank, alpha, rng)
    block.attn.v_proj = LoraLinear.wrap(block.attn.v_proj, rank, alpha, rng)


class _Encoder(Module):
    def _init_blocks(self, rng, d, heads, n_blocks, mlp_ratio, lora_rank, lora_alpha):
        self.blocks = [TransformerBlock(rng, d, heads, mlp_ratio) for _ in range(n_blocks)]
        self.ln_out = LayerNorm(d)
        # bases are frozen first; adapters created afterwards stay trainable
        self.freeze()
        if lora_rank:
            for blk in self.blocks:
                _adapt_attention(blk, lora_rank, lora_alpha, rng)

    def _run(self, x: Tensor, key_bias=None) -> Tensor:
        for blk in self.blocks:
            x = blk(x, key_bias)
        return self.ln_out(x)


class TextEncoder(_Encoder):
    def __init__(self, rng: np.random.Generator, vocab_size: int, d: int, heads: int,
                 n_blocks: int, max_len: int, mlp_ratio: int = 4,
                 lora_rank: int = 4, lora_alpha: float = 8.0):
        if d % 2:
            raise ConfigError(f"text width {d} must be even")
        self.max_len = max_len
        self.embed = Tensor(rng.normal(0.0, 1.0, (vocab_size, d)))
        self._pe = pe_1d_table(max_len, d)
        self._init_blocks(rng, d, heads, n_blocks, mlp_ratio, lora_rank, lora_alpha)

    def __call__(self, ids: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
        """``ids`` (B, L) -> tokens (B, L, d). ``valid`` marks real (non-pad) ids."""
        ids = np.asarray(ids, dtype=np.intp)
        x = T.take(self.embed, ids, axis=0) + self._pe[: ids.shape[1]]
        bias = None if valid is None or valid.all() else key_padding_bias(valid)
        return self._run(x, bias)


class ImageEncoder(_Encoder):
    def __init__(self, rng: np.random.Generator, image_size: int, patch: int, channels: int,
                 d: int, heads: int, n_blocks: int, mlp_ratio: int = 4,
                 lora_rank: int = 4, lora_alpha: float = 8.0):
        if image_size % patch:
            raise ConfigError(f"image size {image_size} not divisible by patch {patch}")
        self.patch = patch
        self.channels = channels
        self.grid = image_size // patch
        self.proj = Linear(rng, channels * patch * patch, d)
        self._pe = pe_2d_table(self.grid, self.grid, d)
        self._init_blocks(rng, d, heads, n_blocks, mlp_ratio, lora_rank, lora_alpha)

    def patchify(self, images: np.ndarray) -> np.ndarray:
        """(B, C, H, W) -> (B, n_patches, C·p·p), patches in row-major order."""
        b, c, h, w = images.shape
        p = self.patch
        if h % p or w % p:
            raise ConfigError(f"image {h}x{w} not divisible by patch {p}")
        x = images.reshape(b, c, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
        return x.reshape(b, (h // p) * (w // p), c * p * p)

    def __call__(self, images: np.ndarray) -> Tensor:
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[:, None]
        x = self.proj(Tensor(self.patchify(images))) + self._pe
        return self._run(x)


def encode_text(encoder: TextEncoder, instr: Instruction) -> TokenSeq:
    ids = list(instr.token_ids)
    if len(ids) > encoder.max_len:
        log.warning("instruction %r has %d tokens; truncating to %d",
                    instr.raw_text, len(ids), encoder.max_len)
        ids = ids[: encoder.max_len]
    out = encoder(np.asarray([ids]))
    return TokenSeq(T.reshape(out, out.shape[1:]), "text")


def encode_image(encoder: ImageEncoder, obs: Observation) -> TokenSeq:
    img = obs.image
    if img.ndim == 2:
        img = img[None]
    if img.shape[-1] % encoder.patch or img.shape[-2] % encoder.patch:
        raise ConfigError(f"image {img.shape[-2:]} not divisible by patch {encoder.patch}")
    out = encoder(img[None])
    grid = (img.shape[-2] // encoder.patch, img.shape[-1] // encoder.patch)
    return TokenSeq(T.reshape(out, out.shape[1:]), "current_obs", grid)
