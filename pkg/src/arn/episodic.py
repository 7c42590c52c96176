"""Datasets, split manifests, synthetic motion clips, episode sampling and
confidence-interval evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, SamplingError, ValidationError

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")

# (train, val, test) class counts of the shipped benchmark protocols
PROTOCOL_COUNTS = {
    "HMDB51": (31, 10, 10),
    "miniMIT": (120, 40, 40),
    "UCF101": (70, 10, 21),
}

SHIPPED_MANIFESTS = {"HMDB51": "hmdb51.txt", "miniMIT": "minimit.txt", "UCF101": "ucf101.txt"}


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass
class SplitManifest:
    dataset: str
    train: list[str]
    val: list[str]
    test: list[str]
    declared_counts: tuple[int, int, int] | None = None

    def split(self, name: str) -> list[str]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))

    def problems(self) -> list[str]:
        out = []
        for i, a in enumerate(SPLITS):
            for b in SPLITS[i + 1 :]:
                shared = sorted(set(self.split(a)) & set(self.split(b)))
                if shared:
                    out.append(f"classes in both {a} and {b}: {', '.join(shared)}")
        for name in SPLITS:
            dup = len(self.split(name)) - len(set(self.split(name)))
            if dup:
                out.append(f"{dup} duplicate class name(s) in {name}")
        if self.declared_counts is not None and self.counts != self.declared_counts:
            out.append(f"counts {self.counts} differ from declared {self.declared_counts}")
        expected = PROTOCOL_COUNTS.get(self.dataset)
        if expected is not None and self.counts != expected:
            out.append(f"counts {self.counts} differ from the {self.dataset} protocol {expected}")
        return out

    def validate(self) -> "SplitManifest":
        problems = self.problems()
        if problems:
            raise ValidationError(f"manifest {self.dataset}: " + "; ".join(problems))
        return self

    def dumps(self) -> str:
        lines = [f"dataset={self.dataset} counts={','.join(map(str, self.counts))}"]
        for name in SPLITS:
            lines.append(f"[{name}]")
            lines.extend(self.split(name))
        return "\n".join(lines) + "\n"


def parse_manifest(text: str, strict: bool = True) -> SplitManifest:
    """Parse the ``dataset=<name>`` header plus ``[train]/[val]/[test]`` sections."""
    dataset = None
    declared = None
    sections: dict[str, list[str]] = {s: [] for s in SPLITS}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if dataset is None:
            fields = dict(tok.split("=", 1) for tok in line.split() if "=" in tok)
            if "dataset" not in fields:
                raise ValidationError(f"line {lineno}: expected a 'dataset=<name>' header")
            dataset = fields["dataset"]
            if "counts" in fields:
                try:
                    declared = tuple(int(v) for v in fields["counts"].split(","))
                except ValueError as exc:
                    raise ValidationError(f"bad counts field {fields['counts']!r}") from exc
                if len(declared) != 3:
                    raise ValidationError("counts must list train,val,test")
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in sections:
                raise ValidationError(f"line {lineno}: unknown section [{current}]")
            continue
        if current is None:
            raise ValidationError(f"line {lineno}: class name outside a section")
        sections[current].append(line)
    if dataset is None:
        raise ValidationError("empty manifest")
    manifest = SplitManifest(dataset, sections["train"], sections["val"], sections["test"], declared)
    return manifest.validate() if strict else manifest


def load_manifest(path, strict: bool = True) -> SplitManifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"), strict=strict)


def shipped_manifest_path(dataset: str) -> Path:
    try:
        name = SHIPPED_MANIFESTS[dataset]
    except KeyError:
        raise ValueError(f"no shipped manifest for {dataset!r}") from None
    return Path(str(resources.files("arn") / "data" / "manifests" / name))


def load_shipped_manifest(dataset: str, strict: bool = True) -> SplitManifest:
    return load_manifest(shipped_manifest_path(dataset), strict=strict)


# ---------------------------------------------------------------------------
# clip records (pre-extracted frame tensors)
# ---------------------------------------------------------------------------


def save_clip_record(path, clip: np.ndarray) -> None:
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise ValidationError(f"clip must be (C, T, H, W), got {clip.shape}")
    header = f"shape={','.join(map(str, clip.shape))} dtype=f32\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(clip.astype("<f4").tobytes())


def load_clip_record(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        body = fh.read()
    fields = dict(tok.split("=", 1) for tok in header if "=" in tok)
    if fields.get("dtype") != "f32" or "shape" not in fields:
        raise ValidationError(f"{path}: bad clip header {header}")
    shape = tuple(int(v) for v in fields["shape"].split(","))
    if len(shape) != 4 or len(body) != 4 * int(np.prod(shape)):
        raise ValidationError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float32)


def sample_frames(clip: np.ndarray, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random frame subset, kept in temporal order."""
    t = clip.shape[1]
    idx = np.sort(rng.choice(t, size=n_frames, replace=t < n_frames))
    return clip[:, idx]


def normalize_clip(clip: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32).reshape(-1, 1, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(-1, 1, 1, 1)
    return (clip - mean) / std


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class ClipDataset:
    clips: np.ndarray  # (n, C, T, H, W)
    labels: np.ndarray  # (n,) global class ids
    class_names: list[str]
    splits: dict[str, list[int]]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self._by_class = {c: np.flatnonzero(self.labels == c) for c in range(len(self.class_names))}

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def clip_shape(self) -> tuple[int, ...]:
        return tuple(self.clips.shape[1:])

    def indices_of(self, cls: int) -> np.ndarray:
        return self._by_class[cls]

    @classmethod
    def from_directory(
        cls,
        root,
        manifest: SplitManifest,
        n_frames: int = 20,
        mean: Sequence[float] = (0.0, 0.0, 0.0),
        std: Sequence[float] = (1.0, 1.0, 1.0),
        seed: int = 0,
    ) -> "ClipDataset":
        """Load ``root/<class>/*.clip`` records for every manifest class."""
        rng = np.random.default_rng(seed)
        root = Path(root)
        names = manifest.train + manifest.val + manifest.test
        clips, labels = [], []
        for ci, name in enumerate(names):
            for path in sorted((root / name).glob("*.clip")):
                raw = load_clip_record(path)
                clips.append(normalize_clip(sample_frames(raw, n_frames, rng), mean, std))
                labels.append(ci)
        if not clips:
            raise ValidationError(f"no clip records found under {root}")
        a, b = len(manifest.train), len(manifest.train) + len(manifest.val)
        splits = {
            "train": list(range(a)),
            "val": list(range(a, b)),
            "test": list(range(b, len(names))),
        }
        return cls(np.stack(clips), np.array(labels), names, splits)


# ---------------------------------------------------------------------------
# synthetic motion clips
# ---------------------------------------------------------------------------

PATTERNS = (
    "left-motion",
    "right-motion",
    "up-motion",
    "down-motion",
    "expand",
    "contract",
    "blink",
    "orbit",
    "diag-down-right",
    "diag-up-left",
    "zigzag",
    "pulse",
)


@dataclass
class SyntheticSpec:
    n_classes: int = 8
    clips_per_class: int = 20
    clip_shape: tuple[int, int, int, int] = (3, 8, 32, 32)
    patterns: tuple[str, ...] | None = None
    noise: float = 0.05
    seed: int = 0
    split_counts: tuple[int, int, int] | None = None

    def __post_init__(self):
        self.clip_shape = tuple(self.clip_shape)
        if self.patterns is None:
            if self.n_classes > len(PATTERNS):
                raise ConfigError(f"at most {len(PATTERNS)} motion patterns available")
            self.patterns = PATTERNS[: self.n_classes]
        self.patterns = tuple(self.patterns)
        if len(self.patterns) != self.n_classes:
            raise ConfigError("one motion pattern per class required")
        unknown = set(self.patterns) - set(PATTERNS)
        if unknown:
            raise ConfigError(f"unknown motion patterns {sorted(unknown)}")
        c, t, h, w = self.clip_shape
        if c != 3 or t < 2 or h < 8 or w < 8:
            raise ConfigError(f"synthetic clips need shape (3, >=2, >=8, >=8), got {self.clip_shape}")
        if self.noise < 0:
            raise ConfigError("noise level must be non-negative")


class MotionRenderer:
    """Renders one textured square following a class-specific trajectory.

    Frames carry a bright ground band along the bottom rows so that the
    upright orientation is recoverable (rotation pretext task).
    """

    def __init__(self, clip_shape, seed: int):
        _, self.t, self.h, self.w = clip_shape
        self.s = max(2, self.h // 4)
        self.v = max(1, self.h // 16)
        self.ground = max(1, self.h // 16)
        rng = np.random.default_rng([seed, 7919])
        self.texture = 0.6 + 0.4 * (rng.random((2 * self.s, 2 * self.s)) > 0.5)
        self.colour = np.array([1.0, 0.7, 0.4])

    # each parameter tuple is (row, col, phase)
    def param_space(self, pattern: str) -> list[tuple[int, int, int]]:
        t, h, w, s, v, g = self.t, self.h, self.w, self.s, self.v, self.ground
        travel = v * (t - 1)
        top = h - g - s  # largest row keeping the square above the ground band
        if pattern in ("left-motion", "right-motion", "up-motion", "down-motion"):
            horiz = pattern in ("left-motion", "right-motion")
            if horiz:
                rows, cols = range(0, top + 1), range(0, w - s - travel + 1)
            else:
                rows, cols = range(0, top - travel + 1), range(0, w - s + 1)
            return [(r, c, 0) for r in rows for c in cols]
        if pattern in ("diag-down-right", "diag-up-left"):
            return [(r, c, 0) for r in range(0, top - travel + 1) for c in range(0, w - s - travel + 1)]
        if pattern in ("expand", "contract", "pulse"):
            m = s  # room for the largest square (2s) around the centre
            return [(r, c, 0) for r in range(m, h - g - m + 1) for c in range(m, w - m + 1)]
        if pattern == "blink":
            return [(r, c, p) for r in range(0, top + 1) for c in range(0, w - s + 1) for p in (0, 1)]
        if pattern == "orbit":
            rad = max(1, h // 8)
            return [
                (r, c, p)
                for r in range(rad, top - rad + 1)
                for c in range(rad, w - s - rad + 1)
                for p in range(4)
            ]
        if pattern == "zigzag":
            return [(r, c, p) for r in range(v, top - v + 1) for c in range(0, w - s - travel + 1) for p in (0, 1)]
        raise ConfigError(f"unknown motion pattern {pattern!r}")

    def _boxes(self, pattern: str, r: int, c: int, p: int):
        """Yield (row, col, size) per frame; size 0 hides the square."""
        s, v, t = self.s, self.v, self.t
        for f in range(t):
            if pattern == "left-motion":
                yield r, c + v * (t - 1 - f), s
            elif pattern == "right-motion":
                yield r, c + v * f, s
            elif pattern == "up-motion":
                yield r + v * (t - 1 - f), c, s
            elif pattern == "down-motion":
                yield r + v * f, c, s
            elif pattern == "diag-down-right":
                yield r + v * f, c + v * f, s
            elif pattern == "diag-up-left":
                yield r + v * (t - 1 - f), c + v * (t - 1 - f), s
            elif pattern in ("expand", "contract", "pulse"):
                if pattern == "pulse":
                    frac = 0.5 - 0.5 * math.cos(2 * math.pi * f / max(t - 1, 1))
                else:
                    frac = f / max(t - 1, 1)
                    frac = frac if pattern == "expand" else 1.0 - frac
                size = int(round(s / 2 + frac * (2 * s - s / 2)))
                size = max(1, size)
                yield r - size // 2, c - size // 2, size
            elif pattern == "blink":
                yield r, c, s if (f + p) % 2 == 0 else 0
            elif pattern == "orbit":
                rad = max(1, self.h // 8)
                ang = p * math.pi / 2 + 2 * math.pi * f / t
                yield r + int(round(rad * math.sin(ang))), c + int(round(rad * math.cos(ang))), s
            elif pattern == "zigzag":
                dy = v if (f + p) % 2 else -v
                yield r + dy, c + v * f, s
            else:
                raise ConfigError(f"unknown motion pattern {pattern!r}")

    def render(self, pattern: str, params: tuple[int, int, int]) -> np.ndarray:
        clip = np.zeros((3, self.t, self.h, self.w), dtype=np.float64)
        clip[:, :, self.h - self.ground :, :] = 0.5
        for f, (r, c, size) in enumerate(self._boxes(pattern, *params)):
            if size <= 0:
                continue
            r0, c0 = max(r, 0), max(c, 0)
            r1, c1 = min(r + size, self.h), min(c + size, self.w)
            if r1 <= r0 or c1 <= c0:
                continue
            tex = self.texture[: r1 - r0, : c1 - c0]
            clip[:, f, r0:r1, c0:c1] = self.colour[:, None, None] * tex
        return clip


def generate_synthetic(spec: SyntheticSpec) -> ClipDataset:
    """Deterministic dataset whose classes differ only by motion pattern."""
    renderer = MotionRenderer(spec.clip_shape, spec.seed)
    rng = np.random.default_rng(spec.seed)
    clips, labels = [], []
    for ci, pattern in enumerate(spec.patterns):
        space = renderer.param_space(pattern)
        if not space:
            raise ConfigError(f"clip shape {spec.clip_shape} too small for pattern {pattern}")
        picks = rng.choice(len(space), size=spec.clips_per_class, replace=len(space) < spec.clips_per_class)
        for i in picks:
            clip = renderer.render(pattern, space[int(i)])
            if spec.noise:
                clip = clip + spec.noise * rng.standard_normal(clip.shape)
            clips.append(clip.astype(np.float32))
            labels.append(ci)
    if spec.split_counts is None:
        splits = {"train": list(range(spec.n_classes)), "val": [], "test": []}
    else:
        a, b, c = spec.split_counts
        if a + b + c != spec.n_classes:
            raise ConfigError("split counts must add up to the class count")
        splits = {
            "train": list(range(a)),
            "val": list(range(a, a + b)),
            "test": list(range(a + b, a + b + c)),
        }
    return ClipDataset(np.stack(clips), np.array(labels), list(spec.patterns), splits)


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------


@dataclass
class Episode:
    way: int
    shot: int
    queries: int
    classes: np.ndarray  # global class ids, episode label i <-> classes[i]
    support_idx: np.ndarray
    support_labels: np.ndarray
    query_idx: np.ndarray
    query_labels: np.ndarray
    support: np.ndarray = field(repr=False, default=None)
    query: np.ndarray = field(repr=False, default=None)


def sample_episode(
    dataset: ClipDataset, split: str, way: int, shot: int, queries: int, rng: np.random.Generator
) -> Episode:
    """Draw an L-way Z-shot episode; classes and clips are sampled without replacement."""
    pool = dataset.splits.get(split)
    if pool is None:
        raise SamplingError(f"unknown split {split!r}")
    if way < 1 or shot < 1 or queries < 0:
        raise SamplingError("way and shot must be positive, queries non-negative")
    if len(pool) < way:
        raise SamplingError(f"split {split!r} has {len(pool)} classes, {way} requested")
    classes = np.sort(rng.choice(np.asarray(pool), size=way, replace=False))
    s_idx, q_idx = [], []
    for c in classes:
        members = dataset.indices_of(int(c))
        if len(members) < shot + queries:
            raise SamplingError(f"class {dataset.class_names[c]} has {len(members)} clips, {shot + queries} needed")
        chosen = rng.choice(members, size=shot + queries, replace=False)
        s_idx.append(chosen[:shot])
        q_idx.append(chosen[shot:])
    s_idx = np.concatenate(s_idx)
    q_idx = np.concatenate(q_idx) if queries else np.zeros(0, dtype=int)
    ep = Episode(
        way, shot, queries, classes,
        s_idx, np.repeat(np.arange(way), shot),
        q_idx, np.repeat(np.arange(way), queries),
    )
    ep.support = dataset.clips[s_idx]
    ep.query = dataset.clips[q_idx]
    return ep


@dataclass
class EvalResult:
    mean: float  # percent
    ci95: float  # percent
    episodes: int
    accuracies: np.ndarray = field(repr=False)


def summarize(accuracies: Sequence[float]) -> EvalResult:
    """Mean accuracy and 1.96 * sample std / sqrt(E), in percent, two decimals."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size < 2:
        raise ValueError("need at least two episodes for a confidence interval")
    mean = 100.0 * acc.mean()
    ci = 100.0 * 1.96 * acc.std(ddof=1) / math.sqrt(acc.size)
    return EvalResult(round(mean, 2), round(ci, 2), int(acc.size), acc)


def episode_seeds(seed: int, count: int) -> list[np.random.Generator]:
    """Independent per-episode generators derived from one run seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def evaluate(
    predict_fn: Callable[[Episode, np.random.Generator], np.ndarray],
    dataset: ClipDataset,
    split: str,
    way: int,
    shot: int,
    queries: int,
    episodes: int,
    seed: int = 0,
    transform: Callable[[Episode, np.random.Generator], Episode] | None = None,
) -> EvalResult:
    """Mean episode accuracy +- 95% CI; ``predict_fn`` maps an episode to query labels."""
    if episodes < 2:
        raise ValueError("evaluation needs at least two episodes")
    accs = []
    for rng in episode_seeds(seed, episodes):
        ep = sample_episode(dataset, split, way, shot, queries, rng)
        if transform is not None:
            ep = transform(ep, rng)
        pred = np.asarray(predict_fn(ep, rng))
        accs.append(float(np.mean(pred == ep.query_labels)))
    return summarize(accs)


def chance_predictor(ep: Episode, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(ep.way, size=len(ep.query_labels))
