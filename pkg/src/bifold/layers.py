"""Small module system and transformer building blocks on top of :mod:`bifold.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameter container. Every ``Tensor`` attribute is a registered parameter;
    ``Module`` attributes and lists of modules are walked recursively."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False


def _param(data: np.ndarray, trainable: bool = True) -> Tensor:
    return Tensor(data, requires_grad=trainable)


class Linear(Module):
    """y = x Wᵀ (+ b); W is (out, in)."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = _param(rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_out, d_in)))
        self.bias = _param(np.zeros(d_out)) if bias else None

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, T.transpose(self.weight))
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = _param(np.ones(d))
        self.beta = _param(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class MultiHeadAttention(Module):
    """Full self-attention. ``q_proj``/``v_proj`` may be swapped for LoRA layers."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        if d % heads:
            raise ValueError(f"model width {d} not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = Linear(rng, d, d, bias=False)
        self.k_proj = Linear(rng, d, d, bias=False)
        self.v_proj = Linear(rng, d, d, bias=False)
        self.o_proj = Linear(rng, d, d, bias=False)

    def __call__(self, x: Tensor, key_bias: np.ndarray | None = None,
                 keep: list | None = None, queries: slice | None = None) -> Tensor:
        """Self-attention over ``x`` (B, n, d); with ``queries`` only those rows are returned."""
        b, n, d = x.shape
        h = self.heads
        dh = d // h

        def split(t: Tensor) -> Tensor:
            return T.transpose(T.reshape(t, (b, t.shape[1], h, dh)), (0, 2, 1, 3))

        xq = x if queries is None else T.getitem(x, (slice(None), queries))
        q, k, v = split(self.q_proj(xq)), split(self.k_proj(x)), split(self.v_proj(x))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        if key_bias is not None:
            scores = scores + key_bias
        attn = T.softmax_lastdim(scores)
        if keep is not None:
            keep.append(attn.data.copy())
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, xq.shape[1], d))
        return self.o_proj(ctx)


class TransformerBlock(Module):
    """Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(rng, d, heads)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(rng, d, mlp_ratio * d)
        self.fc2 = Linear(rng, mlp_ratio * d, d)

    def __call__(self, x: Tensor, key_bias: np.ndarray | None = None,
                 keep: list | None = None, queries: slice | None = None) -> Tensor:
        """``queries`` restricts the output to a row range; keys still span all of ``x``."""
        a = self.attn(self.ln1(x), key_bias, keep, queries)
        x = (x if queries is None else T.getitem(x, (slice(None), queries))) + a
        return x + self.fc2(T.gelu(self.fc1(self.ln2(x))))


def key_padding_bias(valid: np.ndarray) -> np.ndarray:
    """(B, n) validity mask -> additive (B, 1, 1, n) attention bias.

    exp(-1e9 - max) underflows to exactly 0, so padded keys carry no weight.
    """
    return np.where(valid, 0.0, -1e9)[:, None, None, :]
