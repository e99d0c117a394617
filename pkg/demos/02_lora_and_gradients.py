"""LoRA adapters on frozen encoders, and a finite-difference spot check.

Shows that a fresh adapter (B = 0) changes nothing, that merging folds the
update into the base weight, and how small the trainable share is.

    python demos/02_lora_and_gradients.py
"""

import numpy as np

from bifold import tensor as T
from bifold.encoders import Vocabulary
from bifold.foldworld import template_words
from bifold.fusion import ContextConfig
from bifold.lora import LoraLinear, lora_forward, merge_weights
from bifold.model import ArchConfig, init_model, trainable_fraction

rng = np.random.default_rng(0)
base = rng.normal(size=(8, 8))
layer = LoraLinear(base, rank=2, alpha=4.0, rng=rng)
x = rng.normal(size=(5, 8))
print("fresh adapter equals base map:", np.array_equal(lora_forward(layer, x), x @ base.T))

layer.B.data = rng.normal(size=layer.B.shape)
merged = merge_weights(layer)
print("merged weight error:", np.abs(lora_forward(layer, x) - x @ merged.T).max())

# One analytic gradient entry of A against a central difference.
xt = T.Tensor(x)
y = layer(xt)
loss = (y * y).sum()
layer.A.zero_grad()
loss.backward()
eps = 1e-6
i, j = 1, 3
orig = layer.A.data[i, j]
layer.A.data[i, j] = orig + eps
up = float(np.sum(lora_forward(layer, x) ** 2))
layer.A.data[i, j] = orig - eps
down = float(np.sum(lora_forward(layer, x) ** 2))
layer.A.data[i, j] = orig
print(f"dL/dA[{i},{j}] analytic {layer.A.grad[i, j]:.8f} numeric {(up - down) / (2 * eps):.8f}")

model = init_model(ArchConfig(), ContextConfig(), Vocabulary(sorted(template_words())), seed=0)
print(f"encoder parameters trained through adapters: {100 * trainable_fraction(model):.2f}%")
