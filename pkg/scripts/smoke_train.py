#!/usr/bin/env python3
"""Overfit check: train on the synthetic smoke set, then score fresh training episodes.

    python scripts/smoke_train.py --config configs/smoke.cfg --out runs/smoke

Reports the untrained baseline, the step at which the rolling training
accuracy crossed the stop target, and the trained model's episode accuracy.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from arn.checkpoint import save_checkpoint
from arn.config import apply_overrides, load_config
from arn.train import build_dataset, build_model, evaluate_model, format_record, metrics_record, train


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/smoke.cfg")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--out")
    args = p.parse_args(argv)

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = apply_overrides(cfg, {"optim.seed": args.seed})
    ds = build_dataset(cfg.data)

    base = evaluate_model(cfg, build_model(cfg, ds.clip_shape), ds, split="train", episodes=args.episodes)
    print("untrained " + metrics_record(cfg, base, "train", cfg.seed), flush=True)

    model = build_model(cfg, ds.clip_shape)
    fit = train(cfg, model, ds, on_step=lambda r: print(format_record(r), flush=True))
    print(format_record({"steps": fit.steps, "reached_step": fit.reached_step or "none",
                        "rolling_acc": fit.rolling_accuracy(cfg.optim.stop_window), "seconds": round(fit.seconds, 1)}))

    after = evaluate_model(cfg, model, ds, split="train", episodes=args.episodes)
    print("trained " + metrics_record(cfg, after, "train", cfg.seed))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "model.ckpt", model.state())
    return 0 if fit.reached_step is not None else 1


if __name__ == "__main__":
    sys.exit(main())
