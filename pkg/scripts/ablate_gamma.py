#!/usr/bin/env python3
"""Train with and without attention alignment and compare accuracy on rotated clips.

    python scripts/ablate_gamma.py --config configs/ablation.cfg --seeds 0 1 2

Prints one metrics record per (gamma, seed) and a final comparison line.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from arn.config import apply_overrides, load_config
from arn.train import build_dataset, build_model, evaluate_model, format_record, metrics_record, rotate_episode, train


def run(cfg_path: str, gammas: list[float], seeds: list[int], episodes: int | None = None, log=print) -> dict:
    base = load_config(cfg_path)
    dataset = build_dataset(base.data)
    means: dict[float, list[float]] = {g: [] for g in gammas}
    for seed in seeds:
        for gamma in gammas:
            cfg = apply_overrides(base, {"model.selfsup.gamma": gamma, "optim.seed": seed})
            model = build_model(cfg, dataset.clip_shape)
            fit = train(cfg, model, dataset)
            res = evaluate_model(cfg, model, dataset, episodes=episodes, transform=rotate_episode)
            means[gamma].append(res.mean)
            log(f"gamma={gamma} train_steps={fit.steps} " + metrics_record(cfg, res, cfg.protocol.eval_split, seed))
    return {g: float(np.mean(v)) for g, v in means.items()}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/ablation.cfg")
    p.add_argument("--gamma", type=float, default=0.5, help="alignment weight of the treated run")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--episodes", type=int)
    args = p.parse_args(argv)
    summary = run(args.config, [args.gamma, 0.0], args.seeds, args.episodes)
    print(format_record({"gamma_on": f"{summary[args.gamma]:.2f}", "gamma_off": f"{summary[0.0]:.2f}",
                         "aligned_wins": summary[args.gamma] >= summary[0.0]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
