"""Low-rank adapters over frozen linear maps."""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .layers import Linear, Module
from .tensor import ContractError, DimensionError, Tensor

log = logging.getLogger(__name__)


class LoraLinear(Module):
    """Frozen ``W`` (out×in) plus a trainable update ``(alpha/r)·B·A``.

    ``A`` is (r×in) with small random init, ``B`` is (out×r) and starts at zero,
    so a fresh adapter leaves the base map unchanged.
    """

    def __init__(self, weight: np.ndarray, rank: int, alpha: float,
                 rng: np.random.Generator | None = None):
        d_out, d_in = weight.shape
        if not 1 <= rank <= min(d_out, d_in):
            raise ValueError(f"LoRA rank {rank} must lie in [1, {min(d_out, d_in)}]")
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(weight, requires_grad=False)
        self.A = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_in), (rank, d_in)), requires_grad=True)
        self.B = Tensor(np.zeros((d_out, rank)), requires_grad=True)
        self.rank = rank
        self.alpha = float(alpha)
        self._merged = False

    @classmethod
    def wrap(cls, base: Linear, rank: int, alpha: float, rng: np.random.Generator) -> "LoraLinear":
        if base.bias is not None:
            raise ValueError("LoRA wrapping expects a bias-free projection")
        return cls(base.weight.data.copy(), rank, alpha, rng)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @property
    def merged(self) -> bool:
        return self._merged

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise DimensionError(f"LoRA input width {x.shape[-1]} != {self.weight.shape[1]}")
        base = T.matmul(x, T.transpose(self.weight))
        if self._merged:
            return base
        low = T.matmul(T.matmul(x, T.transpose(self.A)), T.transpose(self.B))
        return base + low * self.scale

    def unmerge(self) -> None:
        if not self._merged:
            raise ContractError("adapter is not merged")
        self.weight.data = self.weight.data - self.scale * (self.B.data @ self.A.data)
        self._merged = False


def lora_forward(layer: LoraLinear, x) -> np.ndarray:
    """W·x + (alpha/r)·B·(A·x) for a single vector (or row batch) ``x``."""
    x = np.asarray(x, dtype=np.float64)
    with T.no_grad():
        out = layer(Tensor(np.atleast_2d(x))).data
    return out[0] if x.ndim == 1 else out


def merge_weights(layer: LoraLinear, inplace: bool = False) -> np.ndarray:
    """Return W + (alpha/r)·B·A. With ``inplace`` the update is folded into W.

    A layer whose adapter is already folded in cannot be merged again until
    :meth:`LoraLinear.unmerge` is called.
    """
    if layer.merged:
        raise ContractError("adapter already merged into the base weight; unmerge first")
    merged = layer.weight.data + layer.scale * (layer.B.data @ layer.A.data)
    if inplace:
        layer.weight.data = merged
        layer._merged = True
    return merged


def trainable_fraction(module: Module) -> float:
    """Grad-enabled parameter count over total parameter count of ``module``.

    Depends only on shapes and ``requires_grad`` flags.
    """
    total = trainable = 0
    for p in module.parameters():
        total += p.size
        if p.requires_grad:
            trainable += p.size
    if total == 0:
        raise ValueError("module has no parameters")
    if trainable == 0:
        log.warning("no trainable parameters in %s", type(module).__name__)
    return trainable / total
