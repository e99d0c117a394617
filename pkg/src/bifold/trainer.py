"""Supervised training of the policy and binary checkpoints."""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .batching import make_batch, step_inputs, step_targets
from .encoders import Vocabulary
from .foldworld import Dataset
from .fusion import ContextConfig
from .model import ArchConfig, PolicyModel, init_model
from .targets import bce_loss

log = logging.getLogger(__name__)

MAGIC = b"BFLD"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


class TrainingError(RuntimeError):
    """Training diverged; the model holds the last good parameters."""


@dataclass
class TrainConfig:
    lr: float = 3e-3
    steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    sigma: float = 2.0
    context_mode: str = "keyframes"
    history: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer: str = "adam"
    ambiguous_share: float = 0.3
    log_every: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("lr", "steps", "batch_size", "sigma", "history", "adam_eps"):
            if getattr(self, name) <= 0 and not (name == "history" and self.context_mode == "none"):
                raise ValueError(f"train config: {name} must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.ambiguous_share <= 1.0:
            raise ValueError("ambiguous_share must lie in [0, 1]")

    @property
    def context(self) -> ContextConfig:
        return ContextConfig.for_mode(self.context_mode, self.history)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad


class StepPool:
    """Precomputed inputs and targets for every dataset step under one context config."""

    def __init__(self, dataset: Dataset, ctx: ContextConfig, vocab: Vocabulary, sigma: float):
        self.items = dataset.step_index()
        self.inputs = []
        self.targets = []
        for e, s in self.items:
            ep = dataset.episodes[e]
            self.inputs.append(step_inputs(ep, s, ctx, vocab))
            self.targets.append(step_targets(ep, s, sigma, where=f"episode {e} step {s}"))
        # the share targets the history-dependent steps, not whole ambiguous episodes
        flag = np.array([dataset.episodes[e].steps[s].ambiguous for e, s in self.items], dtype=bool)
        self.ordinary = np.flatnonzero(~flag)
        self.ambiguous = np.flatnonzero(flag)

    def sample(self, rng: np.random.Generator, n: int, ambiguous_share: float) -> np.ndarray:
        if not len(self.ambiguous) or not len(self.ordinary):
            return rng.integers(0, len(self.items), n)
        amb = rng.random(n) < ambiguous_share
        out = np.where(amb, rng.choice(self.ambiguous, n), rng.choice(self.ordinary, n))
        return out

    def batch(self, idx, max_len: int):
        b = make_batch([self.inputs[i] for i in idx], max_len)
        pick = np.stack([self.targets[i][0] for i in idx])
        place = np.stack([self.targets[i][1] for i in idx])
        return b, pick, place


@dataclass
class TrainResult:
    model: PolicyModel
    losses: list[float] = field(default_factory=list)


def train(model: PolicyModel, dataset: Dataset, cfg: TrainConfig,
          checkpoint_path: str | os.PathLike | None = None) -> TrainResult:
    """Adam (or SGD) on the trainable parameters; returns the per-step loss curve.

    Deterministic given ``cfg.seed``, the model's init seed and the dataset.
    """
    if model.ctx != cfg.context:
        raise ValueError(f"model context {model.ctx} differs from train config {cfg.context}")
    missing = set(dataset.vocabulary) - set(model.vocab.words)
    if missing:
        raise ValueError(f"dataset words missing from the model vocabulary: {sorted(missing)}")
    pool = StepPool(dataset, model.ctx, model.vocab, cfg.sigma)
    params = model.trainable()
    opt = (Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) if cfg.optimizer == "adam"
           else SGD(params, cfg.lr))
    rng = np.random.default_rng(cfg.seed)
    losses: list[float] = []
    good = [p.data.copy() for p in params]
    for step in range(1, cfg.steps + 1):
        idx = pool.sample(rng, cfg.batch_size, cfg.ambiguous_share)
        batch, pick_t, place_t = pool.batch(idx, model.arch.max_text_len)
        model.zero_grad()
        pick, place, _ = model.forward(batch)
        loss = bce_loss(pick, place, pick_t, place_t)
        value = loss.item()
        if not np.isfinite(value):
            for p, g in zip(params, good):
                p.data = g
            raise TrainingError(f"non-finite loss at step {step}; parameters restored to step {step - 1}")
        loss.backward()
        opt.step()
        if not all(np.all(np.isfinite(p.data)) for p in params):
            for p, g in zip(params, good):
                p.data = g
            raise TrainingError(f"non-finite parameters after step {step}; restored to step {step - 1}")
        for g, p in zip(good, params):
            np.copyto(g, p.data)
        losses.append(value)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.6f", step, value)
        if checkpoint_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(model, checkpoint_path)
    if checkpoint_path:
        save_checkpoint(model, checkpoint_path)
    return TrainResult(model, losses)


# -- checkpoints --------------------------------------------------------------
def save_checkpoint(model: PolicyModel, path: str | os.PathLike) -> None:
    """BFLD | u32 version | u64 header length | JSON header | float32 LE payload."""
    tensors = []
    chunks = []
    offset = 0
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        tensors.append({"name": name, "shape": list(p.shape), "offset": offset,
                        "trainable": p.requires_grad})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = dict(model.config_dict(), tensors=tensors, payload_bytes=offset)
    hbytes = json.dumps(header).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def read_header(path: str | os.PathLike) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header ({hlen} bytes declared)")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: header is not valid JSON: {exc}") from exc
    return header, raw[16 + hlen:]


def load_checkpoint(path: str | os.PathLike) -> PolicyModel:
    header, payload = read_header(path)
    try:
        arch = ArchConfig(**header["arch"])
        ctx = ContextConfig(**header["context"])
        vocab = Vocabulary(header["vocabulary"])
        entries = header["tensors"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: header missing field {exc}") from exc
    if len(payload) != header.get("payload_bytes", -1):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header declares "
                              f"{header.get('payload_bytes')} (truncated or padded file)")
    model = init_model(arch, ctx, vocab, header.get("seed", 0))
    registry = model.registry()
    names = [e["name"] for e in entries]
    if sorted(names) != sorted(registry):
        extra = sorted(set(names) - set(registry))
        absent = sorted(set(registry) - set(names))
        raise CheckpointError(f"{path}: tensor list does not match the model (extra {extra}, missing {absent})")
    for e in entries:
        p = registry[e["name"]]
        shape = tuple(e["shape"])
        if shape != p.shape:
            raise CheckpointError(f"{path}: tensor {e['name']} has shape {shape}, model expects {p.shape}")
        n = int(np.prod(shape)) * 4
        start = e["offset"]
        if start < 0 or start + n > len(payload):
            raise CheckpointError(f"{path}: tensor {e['name']} runs past the payload")
        p.data = np.frombuffer(payload, dtype="<f4", count=n // 4, offset=start).astype(np.float64).reshape(shape)
    return model


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
