"""On-disk dataset format: ``manifest.json`` plus one 8-bit PGM per frame and mask."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .decoder import ActionSample
from .encoders import Observation
from .foldworld import Dataset, Episode, Step, WorldConfig
from .pnm import ImageFormatError, from_bytes, to_bytes

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class DatasetError(ValueError):
    """Malformed, incomplete or corrupted dataset directory."""


def frame_name(ep_idx: int, frame: int) -> str:
    return f"ep{ep_idx:05}_f{frame:04}.pgm"


def mask_name(ep_idx: int, frame: int) -> str:
    return f"ep{ep_idx:05}_m{frame:04}.pgm"


def _digest(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def export_dataset(dataset: Dataset, out_dir: str | os.PathLike) -> Path:
    """Write ``dataset`` under ``out_dir`` (created if needed); returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    words = set(dataset.vocabulary)
    records = []
    for e, ep in enumerate(dataset.episodes):
        files = []
        for f, obs in enumerate(ep.frames):
            img_raw = to_bytes(obs.image)
            mask_raw = to_bytes(obs.mask.astype(np.float64))
            (out / frame_name(e, f)).write_bytes(img_raw)
            (out / mask_name(e, f)).write_bytes(mask_raw)
            files.append({"frame": frame_name(e, f), "mask": mask_name(e, f),
                          "frame_sha256": _digest(img_raw), "mask_sha256": _digest(mask_raw)})
        steps = []
        for st in ep.steps:
            unknown = set(st.instruction.split()) - words
            if unknown:
                raise DatasetError(f"episode {e}: instruction words {sorted(unknown)} missing from vocabulary")
            steps.append({"instruction": st.instruction, "action": st.action.to_dict(),
                          "keyframe": st.keyframe, "kind": st.kind, "ambiguous": st.ambiguous})
        records.append({"seed": int(ep.seed), "scenario": ep.scenario,
                        "canonical_transform": ep.canonical_transform, "base": list(ep.base),
                        "keyframe_indices": list(ep.keyframe_indices), "files": files, "steps": steps})
    manifest = {"format_version": FORMAT_VERSION, "seed": int(dataset.seed),
                "config": asdict(dataset.config), "vocabulary": list(dataset.vocabulary),
                "episodes": records}
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=1))
    return path


def _read_pgm(path: Path, digest: str) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"missing file {path}")
    raw = path.read_bytes()
    if _digest(raw) != digest:
        raise DatasetError(f"checksum mismatch for {path}")
    try:
        return from_bytes(raw, str(path))
    except ImageFormatError as exc:
        raise DatasetError(str(exc)) from exc


def load_dataset(data_dir: str | os.PathLike) -> Dataset:
    root = Path(data_dir)
    mpath = root / MANIFEST
    if not mpath.is_file():
        raise DatasetError(f"no {MANIFEST} in {root}")
    try:
        manifest = json.loads(mpath.read_text())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{mpath}: not valid JSON ({exc})") from exc
    if not isinstance(manifest, dict):
        raise DatasetError(f"{mpath}: top level must be an object")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"{mpath}: unsupported format_version {manifest.get('format_version')!r}")
    try:
        cfg_raw = dict(manifest["config"])
        cfg_raw["sizes"] = tuple(cfg_raw["sizes"])
        cfg = WorldConfig(**cfg_raw)
        vocab = [str(w) for w in manifest["vocabulary"]]
        episodes = []
        for e, rec in enumerate(manifest["episodes"]):
            frames = []
            for entry in rec["files"]:
                img = _read_pgm(root / entry["frame"], entry["frame_sha256"])
                mask = _read_pgm(root / entry["mask"], entry["mask_sha256"])
                frames.append(Observation(img, mask > 0.5))
            steps = [Step(s["instruction"], ActionSample.from_dict(s["action"]), int(s["keyframe"]),
                          s["kind"], bool(s["ambiguous"])) for s in rec["steps"]]
            keys = [int(k) for k in rec["keyframe_indices"]]
            if any(not 0 <= k < len(frames) for k in keys):
                raise DatasetError(f"{mpath}: episode {e} keyframe index outside its {len(frames)} frames")
            episodes.append(Episode(frames, keys, steps, int(rec["seed"]), rec["scenario"],
                                    rec["canonical_transform"], tuple(int(v) for v in rec["base"])))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"{mpath}: malformed manifest ({type(exc).__name__}: {exc})") from exc
    return Dataset(episodes, vocab, cfg, int(manifest.get("seed", 0)))
