"""Gaussian-mixture supervision maps and the per-pixel binary cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

BCE_EPS = 1e-7


class TargetError(ValueError):
    """Supervision cannot be built from the given positions/mask."""


@dataclass
class TargetMap:
    probs: np.ndarray
    kind: str
    sigma: float
    components: list[tuple[int, int]]


def build_target(positions: Sequence[tuple[int, int]], sigma: float, shape: tuple[int, int],
                 mask: np.ndarray | None = None, kind: str | None = None,
                 where: str = "") -> TargetMap:
    """Equal-weight isotropic Gaussians at pixel centers, optionally masked, renormalized.

    Pick targets (``kind='pick'``) require a mask and every component on it.
    ``where`` names the episode/step in error messages.
    """
    kind = kind or ("pick" if mask is not None else "place")
    h, w = shape
    if not positions:
        raise TargetError(f"{where}: no target positions")
    if kind == "pick" and mask is None:
        raise TargetError(f"{where}: pick targets need a segmentation mask")
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    acc = np.zeros(shape)
    for r, c in positions:
        if not (0 <= r < h and 0 <= c < w):
            raise TargetError(f"{where}: position {(r, c)} outside {h}x{w} image")
        if kind == "pick" and not mask[r, c]:
            raise TargetError(f"{where}: pick position {(r, c)} is off the cloth mask")
        acc += np.exp(-((rr - r) ** 2 + (cc - c) ** 2) / (2.0 * sigma ** 2))
    if mask is not None:
        acc = acc * np.asarray(mask, dtype=bool)
    total = acc.sum()
    if total <= 0:
        raise TargetError(f"{where}: target has no mass left after masking")
    return TargetMap(acc / total, kind, float(sigma), [tuple(map(int, p)) for p in positions])


def bce_map(pred: Tensor, target: np.ndarray) -> Tensor:
    """Pixel-averaged BCE for a batch of maps (B, H, W) -> (B,)."""
    p = T.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    t = np.asarray(target, dtype=np.float64)
    per_px = -(T.log(p) * t + T.log(1.0 - p) * (1.0 - t))
    b = pred.shape[0]
    return T.mean(T.reshape(per_px, (b, -1)), axis=1)


def bce_loss(pick: Tensor, place: Tensor, pick_target: np.ndarray, place_target: np.ndarray) -> Tensor:
    """Mean over the two maps (and the batch) of pixel-averaged BCE."""
    if pick.ndim == 2:
        pick, place = T.reshape(pick, (1,) + pick.shape), T.reshape(place, (1,) + place.shape)
        pick_target, place_target = pick_target[None], place_target[None]
    return (T.mean(bce_map(pick, pick_target)) + T.mean(bce_map(place, place_target))) * 0.5


def binary_entropy(t: np.ndarray) -> float:
    """Pixel-averaged BCE of a map against itself (the loss floor)."""
    p = np.clip(t, BCE_EPS, 1 - BCE_EPS)
    return float(np.mean(-(t * np.log(p) + (1 - t) * np.log(1 - p))))
