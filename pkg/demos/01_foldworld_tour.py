"""A walk through the synthetic folding world.

Generates one ordinary and one ambiguous episode, prints their instructions
and ground-truth actions, and shows why the ambiguous one needs history:
both fold orders end in the same picture but call for different unfolds.

    python demos/01_foldworld_tour.py
"""

import numpy as np

from bifold.foldworld import generate_episode


def ascii_frame(image: np.ndarray) -> str:
    """Cloth layers as characters: '.' empty, then 1, 2, 3... layers."""
    levels = np.floor((image - 0.5) / 0.2 + 0.5).astype(int) + 1
    levels[image == 0] = 0
    return "\n".join("".join("." if v == 0 else str(v) for v in row) for row in levels)


ordinary = generate_episode("ordinary", seed=3)
print("ordinary episode:", len(ordinary.frames), "frames, keyframes at", ordinary.keyframe_indices)
for step in ordinary.steps:
    print(f"  {step.instruction!r:45} picks {step.action.pick_left}, {step.action.pick_right}"
          f"  places {step.action.place_left}, {step.action.place_right}")

# The same seed with the fold order forced both ways.
a = generate_episode("ambiguous", seed=11, swap=False)
b = generate_episode("ambiguous", seed=11, swap=True)
last_a, last_b = a.observation(2), b.observation(2)
print("\nambiguous pair, fold orders:")
print("  A:", [s.instruction for s in a.steps[:2]])
print("  B:", [s.instruction for s in b.steps[:2]])
print("pre-unfold frames identical:", np.array_equal(last_a.image, last_b.image))
print("unfold instruction identical:", a.steps[2].instruction == b.steps[2].instruction)
print("unfold actions differ:", a.steps[2].action != b.steps[2].action)
print("\ncurrent observation (layer counts):")
print(ascii_frame(last_a.image))
print("\nprevious keyframe in order A:")
print(ascii_frame(a.observation(1).image))
print("\nprevious keyframe in order B:")
print(ascii_frame(b.observation(1).image))
