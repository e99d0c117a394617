"""Turning dataset steps into model batches and supervision targets."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .encoders import Vocabulary, tokenize
from .foldworld import Dataset, Episode, context_frames
from .fusion import ContextConfig
from .model import Batch
from .targets import build_target


def step_inputs(ep: Episode, step: int, ctx: ContextConfig, vocab: Vocabulary):
    """(token ids, current image (1,H,W), context images (H_ctx,1,H,W)) for one step."""
    instr = tokenize(ep.steps[step].instruction, vocab)
    cur = ep.observation(step).image[None]
    ctx_frames = context_frames(ep, step, ctx)
    if ctx_frames:
        context = np.stack([o.image[None] for o in ctx_frames])
    else:
        context = np.zeros((0,) + cur.shape)
    return np.asarray(instr.token_ids), cur, context


def make_batch(samples: Sequence[tuple], max_len: int) -> Batch:
    ids_list = [s[0][:max_len] for s in samples]
    L = max(len(i) for i in ids_list)
    ids = np.zeros((len(samples), L), dtype=np.intp)
    valid = np.zeros((len(samples), L), dtype=bool)
    for k, i in enumerate(ids_list):
        ids[k, : len(i)] = i
        valid[k, : len(i)] = True
    return Batch(ids, valid, np.stack([s[1] for s in samples]), np.stack([s[2] for s in samples]))


def batch_for(dataset: Dataset, items: Sequence[tuple[int, int]], ctx: ContextConfig,
              vocab: Vocabulary, max_len: int) -> Batch:
    return make_batch([step_inputs(dataset.episodes[e], s, ctx, vocab) for e, s in items], max_len)


def step_targets(ep: Episode, step: int, sigma: float, where: str = "") -> tuple[np.ndarray, np.ndarray]:
    """Mask-restricted pick mixture and unrestricted place mixture for one step."""
    obs = ep.observation(step)
    a = ep.steps[step].action
    shape = obs.image.shape
    pick = build_target([a.pick_left, a.pick_right], sigma, shape, mask=obs.mask, kind="pick",
                        where=where or f"seed {ep.seed} step {step}")
    place = build_target([a.place_left, a.place_right], sigma, shape, kind="place")
    return pick.probs, place.probs
