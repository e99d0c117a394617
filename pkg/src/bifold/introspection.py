"""PCA maps of patch features and text-to-image attention maps."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .batching import make_batch, step_inputs
from .encoders import tokenize
from .foldworld import Episode, context_frames
from .pnm import write_image

log = logging.getLogger(__name__)


@dataclass
class PCAResult:
    components: np.ndarray  # (k, d), unit rows, descending eigenvalue
    mean: np.ndarray
    eigenvalues: np.ndarray

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) @ self.components.T


def pca_fit(features: np.ndarray, n_components: int | None = 3) -> PCAResult:
    """Principal axes from the SVD of the centered data.

    Eigenvalues are sample variances (n − 1 denominator). Each component is
    signed so that its largest-magnitude entry is positive. When fewer than
    ``n_components`` directions carry variance the rest are zero-filled.
    """
    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    if n < 4:
        raise ValueError(f"PCA needs at least 4 rows, got {n}")
    k = d if n_components is None else n_components
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    eig = s ** 2 / (n - 1)
    rank = int(np.sum(eig > eig[0] * 1e-12)) if eig.size and eig[0] > 0 else 0
    comps = np.zeros((k, d))
    vals = np.zeros(k)
    use = min(k, rank, vt.shape[0])
    if use < k:
        log.warning("features span only %d directions; %d PCA channels zero-filled", use, k - use)
    for i in range(use):
        v = vt[i]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps[i] = v
        vals[i] = eig[i]
    return PCAResult(comps, mean, vals)


def _frames(model, ep: Episode, step: int):
    cur = ep.observation(step)
    return [cur] + context_frames(ep, step, model.ctx)


def patch_features(model, images: np.ndarray) -> np.ndarray:
    """Encoder output tokens for (M, H, W) images -> (M, n_patches, d)."""
    with T.no_grad():
        return model.image_encoder(np.asarray(images)[:, None]).data


def pca_visualize(model, ep: Episode, step: int) -> list[np.ndarray]:
    """One RGB map (H, W, 3) per frame: the current observation, then its history.

    A single PCA is fit on the patch features of all frames together; patches
    with a negative first-component score are black, the rest are colored by
    components 1–3, min–max scaled over all retained patches jointly.
    """
    frames = _frames(model, ep, step)
    feats = patch_features(model, np.stack([f.image for f in frames]))
    m, n, d = feats.shape
    flat = feats.reshape(m * n, d)
    pca = pca_fit(flat, 3)
    proj = pca.project(flat)
    keep = proj[:, 0] >= 0
    rgb = np.zeros((m * n, 3))
    if keep.any():
        sel = proj[keep]
        lo, hi = sel.min(axis=0), sel.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        rgb[keep] = (sel - lo) / span
    else:
        log.warning("no patch has a nonnegative first principal component; maps are black")
    g = model.arch.grid
    p = model.arch.patch
    grids = rgb.reshape(m, g, g, 3)
    return [np.repeat(np.repeat(gr, p, axis=0), p, axis=1) for gr in grids]


def attention_map(model, ep: Episode, step: int, word: str, layer: int = -1,
                  target: str = "current") -> np.ndarray:
    """Head-averaged attention from ``word``'s text token to one frame's patches.

    ``target`` is "current" or "context<i>". The returned patch grid sums to 1.
    """
    text = ep.steps[step].instruction
    words = text.lower().split()
    if word.lower() not in words:
        raise LookupError(f"word {word!r} not in instruction tokens {words}")
    pos = words.index(word.lower())
    sample = step_inputs(ep, step, model.ctx, model.vocab)
    batch = make_batch([sample], model.arch.max_text_len)
    if pos >= batch.ids.shape[1]:
        raise LookupError(f"word {word!r} lies beyond the truncated instruction")
    with T.no_grad():
        _, _, fused = model.forward(batch, introspect=True)
    att = fused.attention[layer][0]  # (heads, n, n)
    q = fused.segment("text").start + pos
    seg = fused.segment(target)
    row = att[:, q, seg.start:seg.stop].mean(axis=0)
    row = row / row.sum()
    return row.reshape(fused.grid_shape)


def patch_region(mask: np.ndarray, patch: int, threshold: float = 0.5) -> np.ndarray:
    """Patch-grid boolean: more than ``threshold`` of the patch's pixels lie in ``mask``."""
    h, w = mask.shape
    frac = mask.reshape(h // patch, patch, w // patch, patch).mean(axis=(1, 3))
    return frac > threshold


def concentration_ratio(att: np.ndarray, region: np.ndarray) -> float:
    """Attention mass inside ``region`` relative to a uniform map's mass there."""
    share = region.mean()
    if share == 0:
        raise ValueError("empty region")
    return float(att[region].sum() / share)


def write_pca_images(model, ep: Episode, step: int, out_dir: str | os.PathLike,
                     episode_id: int | str = 0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [write_image(img, out / f"{episode_id}_{step}_{k}_pca.ppm")
            for k, img in enumerate(pca_visualize(model, ep, step))]


def write_attention_images(model, ep: Episode, step: int, word: str, out_dir: str | os.PathLike,
                           layer: int = -1, episode_id: int | str = 0) -> list[Path]:
    """Attention maps for the current frame and every context slot, scaled to [0, 1]."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    targets = ["current"] + [f"context{i}" for i in range(1, model.ctx.H + 1)]
    p = model.arch.patch
    paths = []
    for k, tgt in enumerate(targets):
        grid = attention_map(model, ep, step, word, layer, tgt)
        img = np.repeat(np.repeat(grid / grid.max(), p, axis=0), p, axis=1)
        paths.append(write_image(img, out / f"{episode_id}_{step}_{k}_attn.pgm"))
    return paths
