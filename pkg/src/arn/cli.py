"""Command line entry point: ``arn {train,eval,verify,augment-preview}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_into, save_checkpoint
from .config import RunConfig, apply_overrides, dump_config, load_config
from .errors import CheckpointError, ConfigError
from .train import (
    build_dataset,
    build_model,
    evaluate_model,
    format_record,
    metrics_record,
    rotate_episode,
    train,
)

logger = logging.getLogger("arn")


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = apply_overrides(cfg, {"optim.seed": args.seed})
    return cfg


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    dataset = build_dataset(cfg.data)
    model = build_model(cfg, dataset.clip_shape)
    if args.checkpoint and Path(args.checkpoint).exists() and args.resume:
        load_into(model, args.checkpoint)
    log_lines: list[str] = []

    def on_step(record: dict) -> None:
        line = format_record(record)
        log_lines.append(line)
        print(line, flush=True)

    result = train(cfg, model, dataset, on_step)
    summary = format_record(
        {
            "steps": result.steps,
            "reached_step": result.reached_step if result.reached_step is not None else "none",
            "rolling_acc": result.rolling_accuracy(cfg.optim.stop_window),
            "seconds": round(result.seconds, 1),
            "seed": cfg.seed,
        }
    )
    print(summary, flush=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else (out / "model.ckpt" if out else None)
    if ckpt is not None:
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, model.state())
    if out is not None:
        (out / "config.cfg").write_text(dump_config(cfg), encoding="utf-8")
        (out / "train_log.txt").write_text("\n".join(log_lines + [summary]) + "\n", encoding="utf-8")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    dataset = build_dataset(cfg.data)
    model = build_model(cfg, dataset.clip_shape)
    if args.checkpoint:
        load_into(model, args.checkpoint)
    split = args.split or cfg.protocol.eval_split
    transform = rotate_episode if args.rotate else None
    result = evaluate_model(cfg, model, dataset, split=split, episodes=args.episodes, transform=transform)
    record = metrics_record(cfg, result, split, cfg.seed)
    print(record, flush=True)
    if out is not None:
        with open(out / "metrics.txt", "a", encoding="utf-8") as fh:
            fh.write(record + "\n")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    checks = run_all(seed=args.seed or 0, only=args.only or None)
    for check in checks:
        print(check.line(), flush=True)
    failed = [c.name for c in checks if not c.ok]
    print(format_record({"checks": len(checks), "failed": len(failed)}))
    if args.out:
        out = _out_dir(args)
        (out / "verify.txt").write_text("\n".join(c.line() for c in checks) + "\n", encoding="utf-8")
    return 1 if failed else 0


def write_ppm(path: Path, frame: np.ndarray) -> None:
    """(3, H, W) float frame -> binary PPM, min-max scaled."""
    lo, hi = float(frame.min()), float(frame.max())
    scaled = (frame - lo) / (hi - lo) if hi > lo else np.zeros_like(frame)
    rgb = np.clip(np.round(255 * scaled), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def cmd_augment_preview(args) -> int:
    from . import selfsup as ss
    from .model import label_set_for

    cfg = _load(args)
    out = _out_dir(args) or Path("augment-preview")
    out.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(cfg.data)
    rng = np.random.default_rng(cfg.seed)
    idx = int(rng.integers(len(dataset.clips)))
    clip = dataset.clips[idx]
    kind = args.kind or cfg.model.selfsup.kind
    if kind == "none":
        raise ConfigError("self-supervision is disabled; pass --kind")
    sscfg = apply_overrides(cfg, {"model.selfsup.kind": kind}).model.selfsup
    labels = label_set_for(sscfg, clip.shape)
    lines = [format_record({"clip": idx, "class": dataset.class_names[dataset.labels[idx]], "kind": kind})]
    for key in labels.keys():
        aug = ss.augment(clip, key)
        stem = f"{kind}-{key.label:02d}"
        for t in range(aug.shape[1]) if args.all_frames else [aug.shape[1] // 2]:
            write_ppm(out / f"{stem}-t{t}.ppm", aug[:, t])
        lines.append(f"{stem} {key.describe()}")
    (out / "index.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--checkpoint", help="checkpoint path (written by train, read by eval)")
    common.add_argument("--seed", type=int, help="overrides optim.seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory for logs, metrics and previews")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="arn", description="Few-shot action relation network experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="episodic training")
    p.add_argument("--resume", action="store_true", help="initialise from --checkpoint if it exists")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="mean accuracy and 95%% CI over sampled episodes")
    p.add_argument("--split", help="split to sample episodes from (default protocol.eval_split)")
    p.add_argument("--episodes", type=int, help="episode count (default protocol.episodes)")
    p.add_argument("--rotate", action="store_true", help="rotate every test clip by a random multiple of 90 degrees")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", parents=[common], help="run the oracle suite")
    p.add_argument("--only", nargs="*", help="run only the named checks")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("augment-preview", parents=[common], help="write one clip under every augmentation label")
    p.add_argument("--kind", choices=("rotation", "spatial-jigsaw", "temporal-jigsaw"))
    p.add_argument("--all-frames", action="store_true")
    p.set_defaults(fn=cmd_augment_preview)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
