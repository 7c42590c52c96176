"""Training and evaluation loops shared by the CLI and the experiment scripts."""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import relation as rel
from .config import DataConfig, RunConfig
from .episodic import (
    ClipDataset,
    EvalResult,
    SyntheticSpec,
    evaluate,
    generate_synthetic,
    load_manifest,
    sample_episode,
)
from .model import ARN

logger = logging.getLogger(__name__)


def build_dataset(cfg: DataConfig) -> ClipDataset:
    if cfg.source == "synthetic":
        spec = SyntheticSpec(
            n_classes=cfg.n_classes,
            clips_per_class=cfg.clips_per_class,
            clip_shape=cfg.clip_shape,
            noise=cfg.noise,
            seed=cfg.data_seed,
            split_counts=cfg.split_counts,
            patterns=cfg.patterns,
        )
        return generate_synthetic(spec)
    manifest = load_manifest(cfg.manifest)
    return ClipDataset.from_directory(
        cfg.records_root, manifest, cfg.n_frames, cfg.mean, cfg.std, cfg.data_seed
    )


def build_model(cfg: RunConfig, clip_shape) -> ARN:
    return ARN(cfg.model, clip_shape, seed=cfg.optim.seed)


def format_record(fields: dict) -> str:
    parts = []
    for k, v in fields.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    return " ".join(parts)


def parse_record(line: str) -> dict[str, str]:
    return dict(tok.split("=", 1) for tok in line.split())


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    steps: int = 0
    reached_step: int | None = None  # first step where the rolling accuracy hit the stop target
    seconds: float = 0.0

    def rolling_accuracy(self, window: int = 50) -> float:
        accs = [r["acc"] for r in self.log[-window:]]
        return float(np.mean(accs)) if accs else float("nan")


def train(
    cfg: RunConfig,
    model: ARN,
    dataset: ClipDataset,
    on_step: Callable[[dict], None] | None = None,
) -> TrainResult:
    """SGD on L + beta_ssl L_ssl + gamma L_align over sampled training episodes.

    All randomness (episodes, augmentation keys) comes from ``optim.seed``.
    """
    oc, pc = cfg.optim, cfg.protocol
    rng = np.random.default_rng([oc.seed, 1])
    result = TrainResult()
    window: deque[float] = deque(maxlen=oc.stop_window)
    start = time.perf_counter()
    for step in range(1, oc.steps + 1):
        ep = sample_episode(dataset, pc.train_split, pc.way, pc.shot, pc.queries, rng)
        model.zero_grad()
        fwd = model.objective(ep, rng)
        fwd.total.backward()
        gnorm = model.sgd_step(oc.lr, oc.clip_norm)
        pred = rel.predict(fwd.scores, np.arange(ep.way))
        acc = float(np.mean(pred == ep.query_labels))
        window.append(acc)
        record = {"step": step, **fwd.parts(), "acc": acc, "grad_norm": gnorm}
        result.log.append(record)
        result.steps = step
        if on_step is not None and (step % oc.log_every == 0 or step == oc.steps):
            on_step(record)
        if (
            oc.stop_accuracy is not None
            and len(window) == window.maxlen
            and np.mean(window) > oc.stop_accuracy
        ):
            result.reached_step = step
            break
    result.seconds = time.perf_counter() - start
    model.zero_grad()
    return result


def evaluate_model(
    cfg: RunConfig,
    model: ARN,
    dataset: ClipDataset,
    split: str | None = None,
    episodes: int | None = None,
    seed: int | None = None,
    transform=None,
) -> EvalResult:
    pc = cfg.protocol
    return evaluate(
        model.predict,
        dataset,
        split or pc.eval_split,
        pc.way,
        pc.shot,
        pc.queries,
        episodes or pc.episodes,
        cfg.optim.seed if seed is None else seed,
        transform=transform,
    )


def metrics_record(cfg: RunConfig, result: EvalResult, split: str, seed: int) -> str:
    return format_record(
        {
            "protocol": cfg.protocol.name,
            "split": split,
            "mean": f"{result.mean:.2f}",
            "ci95": f"{result.ci95:.2f}",
            "E": result.episodes,
            "seed": seed,
        }
    )


def rotate_episode(ep, rng: np.random.Generator):
    """Inject an independent random 0/90/180/270 degree rotation into every clip."""
    from .selfsup import rotate_clip

    def rot(clips):
        return np.stack([rotate_clip(c, int(90 * rng.integers(4))) for c in clips])

    ep.support = rot(ep.support)
    ep.query = rot(ep.query)
    return ep
