"""PCA maps and word-to-image attention for one ambiguous step.

Trains a keyframes model for a short while (or loads ``--ckpt``), then writes
PPM images of the PCA coloring and the attention of "unfold" under ./demo_out.

    python demos/04_introspection.py [checkpoint]
"""

import sys
from pathlib import Path

import numpy as np

from bifold.encoders import Vocabulary
from bifold.foldworld import generate_dataset
from bifold.introspection import (attention_map, concentration_ratio, patch_region,
                                  write_attention_images, write_pca_images)
from bifold.model import ArchConfig, init_model
from bifold.trainer import TrainConfig, load_checkpoint, train

data = generate_dataset(40, 7)
if len(sys.argv) > 1:
    model = load_checkpoint(sys.argv[1])
else:
    cfg = TrainConfig(steps=200, log_every=0)
    model = init_model(ArchConfig(), cfg.context, Vocabulary(data.vocabulary), seed=0)
    train(model, data, cfg)

e = next(i for i, ep in enumerate(data.episodes) if ep.scenario == "ambiguous")
ep = data.episodes[e]
step = len(ep.steps) - 1
out = Path("demo_out")
write_pca_images(model, ep, step, out)
write_attention_images(model, ep, step, "unfold", out)
print("wrote", sorted(p.name for p in out.iterdir()))

att = attention_map(model, ep, step, "unfold")
obs = ep.observation(step)
folded = obs.image > data.config.base_value + data.config.layer_gain / 2
ratio = concentration_ratio(att, patch_region(folded, model.arch.patch))
print("attention of 'unfold' on the current frame (per patch, x100):")
print(np.round(100 * att).astype(int))
print(f"concentration on the multi-layer region: {ratio:.2f}x uniform")
