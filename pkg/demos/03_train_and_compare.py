"""Train the three context modes briefly and compare them on ambiguous steps.

A short schedule keeps this to a few minutes on one core; use more steps
(the default 2000) for the full comparison.

    python demos/03_train_and_compare.py [steps]
"""

import sys
import time

from bifold.encoders import Vocabulary
from bifold.foldworld import generate_dataset
from bifold.metrics import evaluate
from bifold.model import ArchConfig, init_model
from bifold.trainer import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
train_set = generate_dataset(200, 1000)
held_out = generate_dataset(50, 2000)
vocab = Vocabulary(train_set.vocabulary)

print(f"{'mode':12} {'AP2 all':>8} {'AP2 ambiguous':>14} {'quantile %':>11} {'seconds':>8}")
for mode in ("none", "consecutive", "keyframes"):
    cfg = TrainConfig(context_mode=mode, steps=steps, log_every=0)
    model = init_model(ArchConfig(), cfg.context, vocab, seed=0)
    start = time.perf_counter()
    result = train(model, train_set, cfg)
    report = evaluate(model, held_out)
    amb = report["by_scenario"]["ambiguous_steps"]
    print(f"{mode:12} {report['ap']['2']:8.3f} {amb['ap']['2']:14.3f} {report['quantile_pct']:11.1f} "
          f"{time.perf_counter() - start:8.1f}")
print("final training loss of the last run:", round(result.losses[-1], 6))
