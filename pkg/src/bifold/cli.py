"""Command-line entry point: gen, train, eval, ablate, analyze, predict."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

from .batching import make_batch, step_inputs
from .dataset_io import DatasetError, export_dataset, load_dataset
from .decoder import extract_action
from .encoders import ConfigError, Vocabulary
from .foldworld import WorldConfig, generate_dataset
from .introspection import write_attention_images, write_pca_images
from .metrics import DEFAULT_THRESHOLDS, evaluate
from .model import ArchConfig, init_model
from .pnm import write_image
from .tensor import ContractError
from .trainer import CheckpointError, TrainConfig, TrainingError, load_checkpoint, train

log = logging.getLogger("bifold")

MODES = ("none", "consecutive", "keyframes")
METHOD_NAMES = {"none": "BiFold w/o context", "consecutive": "BiFold consecutive", "keyframes": "BiFold"}


class UsageError(Exception):
    pass


# -- config files ---------------------------------------------------------------
def _coerce(value, default, where: str):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        value = tuple(value) if ok else value
    else:
        ok = True
    if not ok:
        raise UsageError(f"config {where}: expected {type(default).__name__}, got {value!r}")
    return value


def build_config(cls, raw: dict | None, where: str, **overrides):
    """Dataclass from a JSON object; unknown keys and wrong types are rejected."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise UsageError(f"config {where}: expected an object")
    defaults = cls()
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise UsageError(f"config {where}: unknown keys {unknown}")
    values = {k: _coerce(v, getattr(defaults, k), f"{where}.{k}") for k, v in raw.items()}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**values)
    except (ValueError, ConfigError) as exc:
        raise UsageError(f"config {where}: {exc}") from exc


def read_json(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {p}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {p}: top level must be an object")
    return data


def echo(out_dir: Path, args: argparse.Namespace, **resolved) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    (out_dir / "config.echo.json").write_text(json.dumps({"flags": flags, **resolved}, indent=1, default=str))


def _train_configs(args) -> tuple[ArchConfig, dict]:
    raw = read_json(getattr(args, "config", None))
    unknown = sorted(set(raw) - {"arch", "train"})
    if unknown:
        raise UsageError(f"train config: unknown sections {unknown} (allowed: arch, train)")
    arch = build_config(ArchConfig, raw.get("arch"), "arch")
    train_raw = raw.get("train") or {}
    if not isinstance(train_raw, dict):
        raise UsageError("config train: expected an object")
    for k in ("seed", "context_mode", "steps"):
        if k in train_raw:
            raise UsageError(f"config train.{k}: set it with the command-line flag instead")
    return arch, train_raw


def _write_losses(path: Path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses, 1):
            w.writerow([i, repr(float(v))])


# -- subcommands ----------------------------------------------------------------
def cmd_gen(args):
    raw = read_json(args.config)
    frac = raw.pop("ambiguous_fraction", 0.5)
    frac = _coerce(frac, 0.5, "ambiguous_fraction")
    if not 0.0 <= frac <= 1.0:
        raise UsageError("config ambiguous_fraction must lie in [0, 1]")
    cfg = build_config(WorldConfig, raw, "world")
    if args.episodes <= 0:
        raise UsageError("--episodes must be positive")
    data = generate_dataset(args.episodes, args.seed, cfg, frac)
    out = Path(args.out)
    export_dataset(data, out)
    echo(out, args, world=asdict(cfg), ambiguous_fraction=frac)
    print(f"wrote {len(data)} episodes to {out}")


def cmd_train(args):
    data = load_dataset(args.data)
    arch, train_raw = _train_configs(args)
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    cfg = build_config(TrainConfig, train_raw, "train", context_mode=args.context_mode,
                       seed=args.seed, steps=args.steps)
    model = init_model(arch, cfg.context, Vocabulary(data.vocabulary), args.seed)
    result = train(model, data, cfg, ckpt)
    _write_losses(ckpt.parent / "loss.csv", result.losses)
    echo(ckpt.parent, args, arch=asdict(arch), train=asdict(cfg))
    print(f"final loss {result.losses[-1]:.6f}; checkpoint {ckpt}")


def cmd_eval(args):
    model = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    report = evaluate(model, data, DEFAULT_THRESHOLDS)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1))
    echo(out.parent, args)
    print(json.dumps(report["ap"]))


def cmd_ablate(args):
    data = load_dataset(args.data)
    held = load_dataset(args.eval_data) if args.eval_data else data
    if not args.eval_data:
        log.warning("no --eval-data given; evaluating on the training episodes")
    arch, train_raw = _train_configs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for mode in MODES:
        cfg = build_config(TrainConfig, train_raw, "train", context_mode=mode, seed=args.seed, steps=args.steps)
        model = init_model(arch, cfg.context, Vocabulary(data.vocabulary), args.seed)
        t0 = time.perf_counter()
        result = train(model, data, cfg, out / f"{mode}.ckpt")
        seconds = time.perf_counter() - t0
        _write_losses(out / f"{mode}.loss.csv", result.losses)
        rep = evaluate(model, held, DEFAULT_THRESHOLDS)
        amb = rep["by_scenario"].get("ambiguous_steps")
        rows.append({"method": METHOD_NAMES[mode], "context_mode": mode, "ap": rep["ap"],
                     "quantile_pct": rep["quantile_pct"],
                     "ambiguous_steps": amb, "train_seconds": round(seconds, 2)})
        print(f"{METHOD_NAMES[mode]}: AP {rep['ap']}")
    (out / "ablation.json").write_text(json.dumps({"seed": args.seed, "rows": rows}, indent=1))
    echo(out, args, arch=asdict(arch), train=train_raw)


def _locate(data, episode: int, step: int):
    if not 0 <= episode < len(data.episodes):
        raise UsageError(f"--episode {episode} out of range (dataset has {len(data.episodes)})")
    ep = data.episodes[episode]
    if not 0 <= step < len(ep.steps):
        raise UsageError(f"--step {step} out of range (episode has {len(ep.steps)} steps)")
    return ep


def cmd_analyze(args):
    model = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    ep = _locate(data, args.episode, args.step)
    out = Path(args.out)
    if args.kind == "pca":
        paths = write_pca_images(model, ep, args.step, out, args.episode)
    else:
        if not args.word:
            raise UsageError("analyze attention needs --word")
        try:
            paths = write_attention_images(model, ep, args.step, args.word, out, args.layer, args.episode)
        except LookupError as exc:
            raise UsageError(str(exc)) from exc
        except IndexError as exc:
            raise UsageError(f"--layer {args.layer}: {exc}") from exc
    echo(out, args)
    for p in paths:
        print(p)


def cmd_predict(args):
    model = load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    ep = _locate(data, args.episode, args.step)
    batch = make_batch([step_inputs(ep, args.step, model.ctx, model.vocab)], model.arch.max_text_len)
    maps = model.heatmaps(batch)[0]
    action = extract_action(maps)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stem = out.with_suffix("")
    write_image(maps.pick / maps.pick.max(), f"{stem}_pick.pgm")
    write_image(maps.place / maps.place.max(), f"{stem}_place.pgm")
    out.write_text(json.dumps(dict(action.to_dict(), degenerate=action.degenerate,
                                   instruction=ep.steps[args.step].instruction), indent=1))
    echo(out.parent, args)
    print(json.dumps(action.to_dict()))


# -- parser ---------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bifold", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset directory")
    g.add_argument("--config", help="JSON world config (optional; defaults otherwise)")
    g.add_argument("--out", required=True)
    g.add_argument("--episodes", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one policy")
    t.add_argument("--data", required=True)
    t.add_argument("--context-mode", choices=MODES, required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--config", help='JSON with optional "arch" and "train" objects')
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="AP@k and quantile report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare all three context modes")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int, required=True)
    a.add_argument("--steps", type=int)
    a.add_argument("--eval-data", help="held-out dataset directory (default: the training data)")
    a.add_argument("--config", help='JSON with optional "arch" and "train" objects')
    a.set_defaults(func=cmd_ablate)

    n = sub.add_parser("analyze", help="PCA or attention images")
    n.add_argument("kind", choices=("pca", "attention"))
    n.add_argument("--ckpt", required=True)
    n.add_argument("--data", required=True)
    n.add_argument("--episode", type=int, required=True)
    n.add_argument("--step", type=int, required=True)
    n.add_argument("--word")
    n.add_argument("--layer", type=int, default=-1)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_analyze)

    r = sub.add_parser("predict", help="decode one step to an action and heatmaps")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--episode", type=int, required=True)
    r.add_argument("--step", type=int, required=True)
    r.add_argument("--out", required=True, help="JSON path; heatmaps go next to it")
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with status 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, DatasetError, CheckpointError, ConfigError, ContractError, TrainingError,
            ValueError, FileNotFoundError) as exc:
        print(f"bifold {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
