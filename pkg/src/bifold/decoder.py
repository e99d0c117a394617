"""Convolutional heatmap heads and bimanual action extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Module
from .tensor import Tensor

Pixel = tuple[int, int]


@dataclass(frozen=True)
class ActionSample:
    """Pick and place pixels (row, col) for both arms."""

    pick_left: Pixel
    pick_right: Pixel
    place_left: Pixel
    place_right: Pixel
    degenerate: bool = False

    def points(self) -> np.ndarray:
        return np.array([self.pick_left, self.pick_right, self.place_left, self.place_right], dtype=float)

    def to_dict(self) -> dict:
        return {"pick_left": list(self.pick_left), "pick_right": list(self.pick_right),
                "place_left": list(self.place_left), "place_right": list(self.place_right)}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSample":
        return cls(*(tuple(int(v) for v in d[k]) for k in ("pick_left", "pick_right", "place_left", "place_right")))

    @classmethod
    def from_pairs(cls, picks, places, degenerate: bool = False) -> "ActionSample":
        pl, pr = order_arms(*picks)
        ql, qr = order_arms(*places)
        return cls(pl, pr, ql, qr, degenerate)


def order_arms(a: Pixel, b: Pixel) -> tuple[Pixel, Pixel]:
    """Left arm takes the smaller column; ties go to the smaller row."""
    a, b = (int(a[0]), int(a[1])), (int(b[0]), int(b[1]))
    return (a, b) if (a[1], a[0]) <= (b[1], b[0]) else (b, a)


@dataclass
class HeatmapPair:
    pick: np.ndarray
    place: np.ndarray


class HeatmapHead(Module):
    """1×1 conv → log2(patch) ×2 transposed-conv stages → 1×1 conv → pixel softmax.

    Channels start at d/2 and halve per stage when ``taper`` is set, else stay at d/2.
    """

    def __init__(self, rng: np.random.Generator, d: int, patch: int, taper: bool = True):
        stages = int(round(np.log2(patch)))
        if 2 ** stages != patch:
            raise ValueError(f"patch size {patch} is not a power of two")
        width = d // 2
        self.inp_w = Tensor(rng.normal(0, 1 / np.sqrt(d), (width, d, 1, 1)), requires_grad=True)
        self.inp_b = Tensor(np.zeros(width), requires_grad=True)
        self.up_w, self.up_b = [], []
        for _ in range(stages):
            nxt = max(width // 2, 1) if taper else width
            # (C_in, C_out, 4, 4), stride 2, pad 1 doubles the extent
            self.up_w.append(Tensor(rng.normal(0, 1 / np.sqrt(width * 4), (width, nxt, 4, 4)),
                                    requires_grad=True))
            self.up_b.append(Tensor(np.zeros(nxt), requires_grad=True))
            width = nxt
        self.out_w = Tensor(rng.normal(0, 1 / np.sqrt(width), (1, width, 1, 1)), requires_grad=True)
        self.out_b = Tensor(np.zeros(1), requires_grad=True)

    def logits(self, grid: Tensor) -> Tensor:
        """(B, gh, gw, d) -> (B, H, W) unnormalized scores."""
        x = T.transpose(grid, (0, 3, 1, 2))
        x = T.gelu(T.conv2d(x, self.inp_w, self.inp_b))
        for w, b in zip(self.up_w, self.up_b):
            x = T.gelu(T.conv_transpose2d(x, w, b, stride=2, padding=1))
        x = T.conv2d(x, self.out_w, self.out_b)
        return T.reshape(x, (x.shape[0], x.shape[2], x.shape[3]))

    def __call__(self, grid: Tensor) -> Tensor:
        z = self.logits(grid)
        b, h, w = z.shape
        return T.reshape(T.softmax_lastdim(T.reshape(z, (b, h * w))), (b, h, w))


def decode_heatmaps(pick_head: HeatmapHead, place_head: HeatmapHead, grid: Tensor) -> tuple[Tensor, Tensor]:
    """Pick and place distributions, each (B, H, W) summing to 1 per sample."""
    return pick_head(grid), place_head(grid)


def _two_modes(prob: np.ndarray, nms_radius: float, rng: np.random.Generator | None):
    h, w = prob.shape
    flat = prob.ravel()
    if rng is None:
        first = int(np.argmax(flat))
    else:
        first = int(rng.choice(flat.size, p=flat / flat.sum()))
    r0, c0 = divmod(first, w)
    rr, cc = np.mgrid[0:h, 0:w]
    keep = ((rr - r0) ** 2 + (cc - c0) ** 2) > nms_radius ** 2
    rest = np.where(keep.ravel(), flat, -np.inf)
    degenerate = not keep.any()
    if not degenerate and rng is None:
        # a flat map left after suppression has no meaningful second mode
        degenerate = np.all(flat[keep.ravel()] == flat[first])
    if degenerate:
        order = np.argsort(-flat, kind="stable")
        first, second = int(order[0]), int(order[1])
        return divmod(first, w), divmod(second, w), True
    if rng is None:
        second = int(np.argmax(rest))
    else:
        pr = np.where(keep.ravel(), flat, 0.0)
        second = int(rng.choice(flat.size, p=pr / pr.sum())) if pr.sum() > 0 else int(np.argmax(rest))
    return (r0, c0), divmod(second, w), False


def extract_action(maps: HeatmapPair, nms_radius: float = 3.0,
                   rng: np.random.Generator | None = None) -> ActionSample:
    """Two modes per map via argmax + disc suppression; arms by column order.

    Passing ``rng`` samples each mode from the distribution instead of taking argmax.
    """
    p1, p2, dp = _two_modes(np.asarray(maps.pick), nms_radius, rng)
    q1, q2, dq = _two_modes(np.asarray(maps.place), nms_radius, rng)
    return ActionSample.from_pairs((p1, p2), (q1, q2), degenerate=dp or dq)
