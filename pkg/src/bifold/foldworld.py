"""Synthetic cloth-folding world: layered rectangles, fold/unfold, rendering and episodes.

A garment is an axis-aligned base rectangle plus the ordered list of folds
applied to it. Every fold acts on one image axis only, so the layer-count grid
is the outer product of a per-row and a per-column count; rendering is a pure
function of the base rectangle and the fold list.

Coordinates are pixel indices (row, col). A fold line ``L`` lies between
pixels ``L-1`` and ``L``; reflecting pixel ``c`` across it gives ``2L-1-c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .decoder import ActionSample, order_arms
from .encoders import Observation
from .fusion import ContextConfig
from .tensor import ContractError

SIDES = ("left", "right", "top", "bottom")
TARGETS = ("center", "opposite")
UNFOLD_TEXT = "unfold the last fold"
_MIRROR = {"left": "right", "right": "left", "top": "bottom", "bottom": "top"}


def template_words() -> set[str]:
    words = set(UNFOLD_TEXT.split())
    for side in SIDES:
        for target in TARGETS:
            words.update(make_instruction(FoldSpec(side, target)).split())
    return words


@dataclass(frozen=True)
class Fold:
    """axis 'col' folds across a vertical line (moves columns), 'row' across a horizontal one.

    direction +1 moves the region with coordinate < line, -1 the region >= line.
    """

    axis: str
    line: int
    direction: int


@dataclass(frozen=True)
class FoldSpec:
    """A fold named by the physical side whose edge moves and where it goes."""

    side: str
    target: str = "center"

    def __post_init__(self):
        if self.side not in SIDES or self.target not in TARGETS:
            raise ValueError(f"bad fold spec {self.side!r}/{self.target!r}")


@dataclass(frozen=True)
class GarmentState:
    top: int
    left: int
    height: int
    width: int
    image_size: int = 32
    folds: tuple[Fold, ...] = ()

    def _coords(self, axis: str) -> np.ndarray:
        base = (np.arange(self.top, self.top + self.height) if axis == "row"
                else np.arange(self.left, self.left + self.width))
        for f in self.folds:
            if f.axis == axis:
                base = _reflect(base, f)
        return base

    def counts(self, axis: str) -> np.ndarray:
        return np.bincount(self._coords(axis), minlength=self.image_size)[: self.image_size]

    def layers(self) -> np.ndarray:
        """Layer count per pixel (0 off cloth)."""
        return np.outer(self.counts("row"), self.counts("col"))

    def extent(self, axis: str) -> tuple[int, int]:
        """Half-open [lo, hi) footprint along ``axis``."""
        c = self._coords(axis)
        return int(c.min()), int(c.max()) + 1

    def bbox(self) -> tuple[int, int, int, int]:
        r0, r1 = self.extent("row")
        c0, c1 = self.extent("col")
        return r0, c0, r1, c1


def _reflect(coords: np.ndarray, f: Fold) -> np.ndarray:
    moving = coords < f.line if f.direction > 0 else coords >= f.line
    return np.where(moving, 2 * f.line - 1 - coords, coords)


def _sweep(coords: np.ndarray, f: Fold, frac: float) -> np.ndarray:
    """Top-down projection of a fold ``frac`` of the way through (flap at angle π·frac)."""
    if frac >= 1.0:
        return _reflect(coords, f)
    moving = coords < f.line if f.direction > 0 else coords >= f.line
    dist = f.line - (coords + 0.5)  # signed distance of pixel centers from the line
    pos = np.floor(f.line - dist * np.cos(np.pi * frac)).astype(int)
    return np.where(moving, pos, coords)


# -- fold algebra -----------------------------------------------------------
def apply_fold(state: GarmentState, axis: str, line: int, direction: int) -> GarmentState:
    lo, hi = state.extent(axis)
    if axis not in ("row", "col") or direction not in (1, -1):
        raise ValueError(f"bad fold axis/direction {axis!r}/{direction}")
    if not lo < line < hi:
        raise ContractError(f"fold line {line} outside the cloth extent [{lo}, {hi}) along {axis}")
    folded = replace(state, folds=state.folds + (Fold(axis, line, direction),))
    lo2, hi2 = folded.extent(axis)
    if lo2 < 0 or hi2 > state.image_size:
        raise ContractError(f"fold at {axis} {line} would move cloth outside the {state.image_size}px image")
    return folded


def apply_unfold(state: GarmentState) -> GarmentState:
    if not state.folds:
        raise ContractError("nothing to unfold: the garment is flat")
    return replace(state, folds=state.folds[:-1])


def fold_for(state: GarmentState, spec: FoldSpec) -> Fold | None:
    """Concrete fold realizing ``spec`` on the current footprint, or None if it does not
    land on a pixel boundary or would move less than two pixels."""
    axis = "col" if spec.side in ("left", "right") else "row"
    lo, hi = state.extent(axis)
    size = hi - lo
    div = 4 if spec.target == "center" else 2
    if size % div or size // div < 2:
        return None
    flap = size // div
    if spec.side in ("left", "top"):
        return Fold(axis, lo + flap, 1)
    return Fold(axis, hi - flap, -1)


def valid_specs(state: GarmentState) -> list[FoldSpec]:
    return [s for s in (FoldSpec(a, b) for a in SIDES for b in TARGETS) if fold_for(state, s)]


# -- rendering ---------------------------------------------------------------
@dataclass(frozen=True)
class RenderConfig:
    base_value: float = 0.5
    layer_gain: float = 0.2


def _image(layers: np.ndarray, rc: RenderConfig) -> Observation:
    cloth = layers >= 1
    img = np.where(cloth, rc.base_value + rc.layer_gain * (layers - 1), 0.0)
    # 8-bit levels so frames survive PGM export bit-exactly
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return Observation(img, cloth)


def render(state: GarmentState, rc: RenderConfig = RenderConfig()) -> Observation:
    return _image(state.layers(), rc)


def render_partial(state: GarmentState, fold: Fold, frac: float,
                   rc: RenderConfig = RenderConfig()) -> Observation:
    """Render ``state`` with ``fold`` (not yet in ``state.folds``) partly executed."""
    coords = _sweep(state._coords(fold.axis), fold, frac)
    n = state.image_size
    moved = np.bincount(np.clip(coords, 0, n - 1), minlength=n)[:n]
    other = state.counts("col" if fold.axis == "row" else "row")
    layers = np.outer(moved, other) if fold.axis == "row" else np.outer(other, moved)
    return _image(layers, rc)


# -- actions and language ------------------------------------------------------
def _edge_points(state: GarmentState, axis: str, edge: int) -> list[tuple[int, int]]:
    """The two footprint corners on the line ``axis = edge``."""
    r0, c0, r1, c1 = state.bbox()
    if axis == "col":
        return [(r0, edge), (r1 - 1, edge)]
    return [(edge, c0), (edge, c1 - 1)]


def _mirror(p: tuple[int, int], axis: str, line: int) -> tuple[int, int]:
    r, c = p
    return (r, 2 * line - 1 - c) if axis == "col" else (2 * line - 1 - r, c)


def ground_truth_action(state: GarmentState, fold: Fold) -> ActionSample:
    """Picks at the moving edge's corners, places at their reflections."""
    lo, hi = state.extent(fold.axis)
    edge = lo if fold.direction > 0 else hi - 1
    picks = _edge_points(state, fold.axis, edge)
    places = [_mirror(p, fold.axis, fold.line) for p in picks]
    return ActionSample.from_pairs(picks, places)


def ground_truth_unfold(state: GarmentState) -> ActionSample:
    """Undo the most recent fold: grab the flap's free edge and lay it back."""
    if not state.folds:
        raise ContractError("nothing to unfold: the garment is flat")
    before = apply_unfold(state)
    fold = state.folds[-1]
    forward = ground_truth_action(before, fold)
    # picks of the unfold are the places of the fold and vice versa
    return ActionSample(forward.place_left, forward.place_right, forward.pick_left, forward.pick_right)


def make_instruction(spec: FoldSpec | None, canonical_transform: str = "identity") -> str:
    """Template text with sides named in the garment's canonical frame; None = unfold."""
    if spec is None:
        return UNFOLD_TEXT
    side = _MIRROR[spec.side] if canonical_transform == "rot180" else spec.side
    target = "center" if spec.target == "center" else "opposite side"
    return f"fold the {side} edge to the {target}"


# -- episodes -----------------------------------------------------------------
@dataclass
class Step:
    instruction: str
    action: ActionSample
    keyframe: int
    kind: str = "fold"  # or "unfold"
    ambiguous: bool = False


@dataclass
class Episode:
    frames: list[Observation]
    keyframe_indices: list[int]
    steps: list[Step]
    seed: int
    scenario: str
    canonical_transform: str = "identity"
    base: tuple[int, int, int, int] = (0, 0, 0, 0)

    def observation(self, step: int) -> Observation:
        return self.frames[self.keyframe_indices[step]]


@dataclass(frozen=True)
class WorldConfig:
    image_size: int = 32
    motion_frames: int = 4
    settle_frames: int = 3
    base_value: float = 0.5
    layer_gain: float = 0.2
    sizes: tuple[int, ...] = (16, 24)
    margin: int = 2
    min_folds: int = 2
    max_folds: int = 4
    rot180_prob: float = 0.0

    @property
    def render_cfg(self) -> RenderConfig:
        return RenderConfig(self.base_value, self.layer_gain)


def _random_base(rng: np.random.Generator, cfg: WorldConfig) -> GarmentState:
    h, w = (int(rng.choice(cfg.sizes)) for _ in range(2))
    n = cfg.image_size
    if max(h, w) + 2 * cfg.margin > n:
        raise ValueError(f"garment size {max(h, w)} does not fit a {n}px image with margin {cfg.margin}")
    top = int(rng.integers(cfg.margin, n - cfg.margin - h + 1))
    left = int(rng.integers(cfg.margin, n - cfg.margin - w + 1))
    return GarmentState(top, left, h, w, n)


class _Recorder:
    def __init__(self, state: GarmentState, cfg: WorldConfig):
        self.cfg = cfg
        self.state = state
        self.frames = [render(state, cfg.render_cfg)]
        self.keyframes = [0]
        self.steps: list[Step] = []

    def _finish(self, instruction, action, kind, ambiguous):
        self.steps.append(Step(instruction, action, self.keyframes[-1], kind, ambiguous))
        settled = render(self.state, self.cfg.render_cfg)
        self.frames.extend(Observation(settled.image.copy(), settled.mask.copy())
                           for _ in range(self.cfg.settle_frames))
        self.keyframes.append(len(self.frames) - 1)

    def fold(self, spec: FoldSpec, canonical: str):
        fold = fold_for(self.state, spec)
        action = ground_truth_action(self.state, fold)
        F = self.cfg.motion_frames
        for k in range(1, F + 1):
            self.frames.append(render_partial(self.state, fold, k / F, self.cfg.render_cfg))
        self.state = apply_fold(self.state, fold.axis, fold.line, fold.direction)
        self._finish(make_instruction(spec, canonical), action, "fold", False)

    def unfold(self, ambiguous: bool):
        action = ground_truth_unfold(self.state)
        fold = self.state.folds[-1]
        before = apply_unfold(self.state)
        F = self.cfg.motion_frames
        for k in range(1, F + 1):
            self.frames.append(render_partial(before, fold, 1.0 - k / F, self.cfg.render_cfg))
        self.state = before
        self._finish(UNFOLD_TEXT, action, "unfold", ambiguous)


def generate_episode(scenario: str, seed: int, cfg: WorldConfig = WorldConfig(),
                     swap: bool | None = None) -> Episode:
    """Ordinary: 2–4 random valid folds. Ambiguous: a horizontal-edge and a vertical-edge
    fold to the center in seed-chosen order, then "unfold the last fold".

    ``swap`` overrides the seed's choice of order for the ambiguous pair.
    """
    rng = np.random.default_rng(seed)
    base = _random_base(rng, cfg)
    canonical = "rot180" if (scenario == "ordinary" and rng.random() < cfg.rot180_prob) else "identity"
    rec = _Recorder(base, cfg)
    if scenario == "ordinary":
        n_folds = int(rng.integers(cfg.min_folds, cfg.max_folds + 1))
        for _ in range(n_folds):
            options = valid_specs(rec.state)
            if not options:
                break
            rec.fold(options[int(rng.integers(len(options)))], canonical)
    elif scenario == "ambiguous":
        pair = [FoldSpec(str(rng.choice(["left", "right"]))), FoldSpec(str(rng.choice(["top", "bottom"])))]
        flip = rng.random() < 0.5
        if flip if swap is None else swap:
            pair.reverse()
        for spec in pair:
            rec.fold(spec, canonical)
        rec.unfold(ambiguous=True)
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    return Episode(rec.frames, rec.keyframes, rec.steps, seed, scenario, canonical,
                   (base.top, base.left, base.height, base.width))


def context_frames(ep: Episode, step: int, cfg: ContextConfig) -> list[Observation]:
    """History for ``step``, most recent first; missing slots repeat the earliest frame."""
    if not 0 <= step < len(ep.steps):
        raise IndexError(f"step {step} out of range for {len(ep.steps)} steps")
    if cfg.context_mode == "none":
        return []
    if cfg.context_mode == "keyframes":
        return [ep.frames[ep.keyframe_indices[max(step - j, 0)]] for j in range(1, cfg.H + 1)]
    k = ep.keyframe_indices[step]
    return [ep.frames[max(k - j, 0)] for j in range(1, cfg.H + 1)]


@dataclass
class Dataset:
    episodes: list[Episode]
    vocabulary: list[str]
    config: WorldConfig = field(default_factory=WorldConfig)
    seed: int = 0

    def __len__(self) -> int:
        return len(self.episodes)

    def step_index(self) -> list[tuple[int, int]]:
        return [(e, s) for e, ep in enumerate(self.episodes) for s in range(len(ep.steps))]


def generate_dataset(n_episodes: int, seed: int, cfg: WorldConfig = WorldConfig(),
                     ambiguous_fraction: float = 0.5) -> Dataset:
    """Episodes with exactly round(n·fraction) ambiguous ones, shuffled by ``seed``."""
    rng = np.random.default_rng(seed)
    n_amb = int(round(n_episodes * ambiguous_fraction))
    scenarios = np.array(["ambiguous"] * n_amb + ["ordinary"] * (n_episodes - n_amb))
    rng.shuffle(scenarios)
    child = np.random.SeedSequence(seed).generate_state(n_episodes)
    episodes = [generate_episode(str(sc), int(s), cfg) for sc, s in zip(scenarios, child)]
    vocab = sorted(template_words() | {w for ep in episodes for st in ep.steps
                                       for w in st.instruction.split()})
    return Dataset(episodes, vocab, cfg, seed)
