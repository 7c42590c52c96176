"""Pretext augmentations, the augmentation discriminator, attention transport
and the attention alignment loss.

Clip-level augmentations act on numpy arrays whose last three axes are
(T, H, W), so they work unchanged on (C, T, H, W) clips and (N, C, T, H, W)
batches. Attention transport reuses the very same augmentation functions:
applying an augmentation to a grid of flat indices yields a gather map,
which is then applied to the (differentiable) attention tensor.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import tensor as tn
from .encoder import AttentionPair, EncoderConfig, Params, init_uniform
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

KINDS = ("rotation", "spatial-jigsaw", "temporal-jigsaw")
ROTATION_ANGLES = (0, 90, 180, 270)


@dataclass(frozen=True)
class AugmentationKey:
    kind: str
    label: int
    payload: tuple[int, ...] | int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")

    def describe(self) -> str:
        payload = self.payload if isinstance(self.payload, int) else ",".join(map(str, self.payload))
        return f"kind={self.kind} label={self.label} payload={payload}"


# ---------------------------------------------------------------------------
# label sets
# ---------------------------------------------------------------------------


def spatial_jigsaw_labels() -> list[tuple[int, ...]]:
    """All 24 quadrant permutations in lexicographic order."""
    return list(itertools.permutations(range(4)))


@lru_cache(maxsize=None)
def _temporal_dictionary(blocks: int, size: int, seed: int) -> tuple[tuple[int, ...], ...]:
    ident = tuple(range(blocks))
    others = [p for p in itertools.permutations(range(blocks)) if p != ident]
    if size - 1 > len(others):
        raise ConfigError(f"cannot draw {size} distinct permutations of {blocks} blocks")
    rng = np.random.default_rng(seed)
    picked = sorted(others[i] for i in rng.choice(len(others), size=size - 1, replace=False))
    return (ident,) + tuple(picked)


def temporal_jigsaw_labels(blocks: int = 4, size: int = 8, seed: int = 0) -> list[tuple[int, ...]]:
    """Fixed dictionary of block permutations; label 0 is the identity."""
    return list(_temporal_dictionary(blocks, size, seed))


@dataclass(frozen=True)
class LabelSet:
    kind: str
    blocks: int = 4
    size: int = 8
    seed: int = 0

    @property
    def payloads(self) -> list:
        if self.kind == "rotation":
            return list(ROTATION_ANGLES)
        if self.kind == "spatial-jigsaw":
            return spatial_jigsaw_labels()
        if self.kind == "temporal-jigsaw":
            return temporal_jigsaw_labels(self.blocks, self.size, self.seed)
        raise ConfigError(f"unknown augmentation kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.payloads)

    def key(self, label: int) -> AugmentationKey:
        payloads = self.payloads
        if not 0 <= label < len(payloads):
            raise ContractError(f"label {label} outside [0, {len(payloads)}) for {self.kind}")
        return AugmentationKey(self.kind, int(label), payloads[label])

    def keys(self) -> list[AugmentationKey]:
        return [self.key(i) for i in range(len(self))]

    def sample(self, rng: np.random.Generator) -> AugmentationKey:
        return self.key(int(rng.integers(len(self))))


# ---------------------------------------------------------------------------
# clip augmentations
# ---------------------------------------------------------------------------


def _check_perm(perm: Sequence[int], n: int) -> tuple[int, ...]:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(n)):
        raise ConfigError(f"{perm} is not a permutation of range({n})")
    return perm


def inverse_perm(perm: Sequence[int]) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argsort(perm))


def rotate_clip(clip: np.ndarray, angle: int) -> np.ndarray:
    """Rotate every frame by ``angle`` degrees counter-clockwise.

    Output pixel (h, w) reads input pixel (w, H - 1 - h) for 90 degrees,
    i.e. [[a, b], [c, d]] -> [[b, d], [a, c]].
    """
    if angle % 90 or angle not in ROTATION_ANGLES:
        raise ConfigError(f"rotation angle must be one of {ROTATION_ANGLES}, got {angle}")
    k = angle // 90
    if k % 2 and clip.shape[-1] != clip.shape[-2]:
        raise ConfigError(f"90/270 degree rotation needs square frames, got {clip.shape[-2:]}")
    return np.ascontiguousarray(np.rot90(clip, k=k, axes=(-2, -1)))


def spatial_jigsaw(clip: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    """Rearrange the four row-major quadrants: output quadrant i <- input quadrant perm[i]."""
    perm = _check_perm(perm, 4)
    h, w = clip.shape[-2:]
    if h % 2 or w % 2:
        raise ConfigError(f"spatial jigsaw needs even frame extents, got {(h, w)}")
    hh, hw = h // 2, w // 2
    quads = [clip[..., :hh, :hw], clip[..., :hh, hw:], clip[..., hh:, :hw], clip[..., hh:, hw:]]
    q = [quads[p] for p in perm]
    top = np.concatenate([q[0], q[1]], axis=-1)
    bottom = np.concatenate([q[2], q[3]], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def temporal_jigsaw(clip: np.ndarray, perm: Sequence[int], axis: int = -3) -> np.ndarray:
    """Reorder equal-length frame blocks: output block i <- input block perm[i].

    Frames keep their order inside a block. ``len(perm)`` fixes the block count.
    """
    n_blocks = len(perm)
    perm = _check_perm(perm, n_blocks)
    t = clip.shape[axis]
    if n_blocks < 1 or t % n_blocks:
        raise ConfigError(f"{t} frames cannot be split into {n_blocks} equal blocks")
    b = t // n_blocks
    order = np.concatenate([np.arange(p * b, (p + 1) * b) for p in perm])
    return np.take(clip, order, axis=axis)


def augment(clip: np.ndarray, key: AugmentationKey) -> np.ndarray:
    if key.kind == "rotation":
        return rotate_clip(clip, int(key.payload))
    if key.kind == "spatial-jigsaw":
        return spatial_jigsaw(clip, key.payload)
    return temporal_jigsaw(clip, key.payload)


def augment_batch(clips: np.ndarray, keys: Sequence[AugmentationKey]) -> np.ndarray:
    if len(keys) != clips.shape[0]:
        raise ContractError("one key per clip required")
    return np.stack([augment(c, k) for c, k in zip(clips, keys)])


def avg_downsample(x: np.ndarray, factors: Sequence[int]) -> np.ndarray:
    """Non-overlapping average pooling of the trailing ``len(factors)`` axes."""
    factors = tuple(factors)
    k = len(factors)
    lead, sp = x.shape[: x.ndim - k], x.shape[x.ndim - k :]
    for n, f in zip(sp, factors):
        if n % f:
            raise DimensionError(f"extent {n} not divisible by factor {f}")
    shape = lead + tuple(v for n, f in zip(sp, factors) for v in (n // f, f))
    nl = len(lead)
    order = tuple(range(nl)) + tuple(nl + 2 * i for i in range(k)) + tuple(nl + 2 * i + 1 for i in range(k))
    windows = x.reshape(shape).transpose(order).reshape(lead + tuple(n // f for n, f in zip(sp, factors)) + (-1,))
    # summing each window in sorted order makes the result independent of how
    # an augmentation shuffled pixels inside it
    return np.sort(windows, axis=-1).sum(axis=-1) / windows.shape[-1]


# ---------------------------------------------------------------------------
# attention transport
# ---------------------------------------------------------------------------


def transport_index(key: AugmentationKey, shape: tuple[int, ...]) -> np.ndarray:
    """Flat gather map: transported.flat[j] = original.flat[index[j]].

    ``shape`` is (H_f, W_f) for spatial kinds and (T_f,) for temporal jigsaw.
    """
    grid = np.arange(int(np.prod(shape))).reshape(shape)
    if key.kind == "temporal-jigsaw":
        if len(shape) != 1:
            raise DimensionError("temporal transport acts on a 1-D attention vector")
        return temporal_jigsaw(grid, key.payload, axis=-1).reshape(-1)
    if len(shape) != 2:
        raise DimensionError("spatial transport acts on a 2-D attention map")
    return augment(grid, key).reshape(-1)


def transport_map(x: Tensor, keys: AugmentationKey | Sequence[AugmentationKey]) -> Tensor:
    """Transport one attention component; batched input takes one key per row."""
    x = tn.as_tensor(x)
    single = isinstance(keys, AugmentationKey)
    comp_ndim = 1 if (keys if single else keys[0]).kind == "temporal-jigsaw" else 2
    comp_shape = x.shape[x.ndim - comp_ndim :]
    lead = x.shape[: x.ndim - comp_ndim]
    if single:
        idx = transport_index(keys, comp_shape)[None, :]
        flat = x.reshape(-1, idx.shape[1])
        return tn.take_along(flat, np.broadcast_to(idx, flat.shape), axis=1).reshape(x.shape)
    if len(lead) != 1 or lead[0] != len(keys):
        raise ContractError(f"{len(keys)} keys for attention batch of shape {x.shape}")
    idx = np.stack([transport_index(k, comp_shape) for k in keys])
    flat = x.reshape(lead[0], -1)
    return tn.take_along(flat, idx, axis=1).reshape(x.shape)


def transport_attention(att: AttentionPair, keys) -> AttentionPair:
    """Apply the feature-resolution image of the input augmentation to the attention."""
    kind = keys.kind if isinstance(keys, AugmentationKey) else keys[0].kind
    t, s = att.temporal, att.spatial
    if kind == "temporal-jigsaw":
        if t is None:
            raise ConfigError("temporal jigsaw transport needs temporal attention")
        t = transport_map(t, keys)
    else:
        if s is None:
            raise ConfigError(f"{kind} transport needs spatial attention")
        s = transport_map(s, keys)
    return AttentionPair(t, s, att.alpha_t, att.alpha_s)


def check_transport_geometry(clip_shape, enc: EncoderConfig, kind: str, blocks: int = 4) -> None:
    """Raise ConfigError unless the augmentation commutes with the encoder's downsampling."""
    _, t, h, w = clip_shape
    _, t_f, h_f, w_f = enc.output_shape(clip_shape)
    d_t, d_s = enc.temporal_factor, enc.spatial_factor
    if kind == "rotation":
        if h != w or h_f != w_f:
            raise ConfigError(f"rotation needs square frames and features, got {(h, w)} -> {(h_f, w_f)}")
    elif kind == "spatial-jigsaw":
        if h % 2 or w % 2 or (h // 2) % d_s or (w // 2) % d_s or h_f % 2 or w_f % 2:
            raise ConfigError(
                f"quadrant boundaries of {(h, w)} frames do not align with spatial downsampling {d_s}"
            )
    elif kind == "temporal-jigsaw":
        if t % blocks or (t // blocks) % d_t or t_f % blocks:
            raise ConfigError(
                f"{blocks} temporal blocks of {t} frames do not align with temporal downsampling {d_t}"
            )
    else:
        raise ConfigError(f"unknown augmentation kind {kind!r}")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def init_discriminator(channels: int, n_classes: int, rng, dtype=np.float64) -> Params:
    return {
        "disc.w": init_uniform(rng, (channels, n_classes), channels, dtype),
        "disc.b": init_uniform(rng, (n_classes,), channels, dtype),
    }


def discriminator_logits(features: Tensor, params: Params) -> Tensor:
    """Global average pool over (T, H, W), then one affine layer to K logits."""
    pooled = tn.as_tensor(features).mean(axes=(-3, -2, -1))
    return pooled @ params["disc.w"] + params["disc.b"]


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Summed -log softmax(logits)[label] over rows."""
    logits = tn.as_tensor(logits)
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    k = logits.shape[-1]
    if labels.shape[0] != logits.shape[0]:
        raise ContractError("one label per logit row required")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"label outside [0, {k})")
    onehot = np.eye(k, dtype=logits.dtype)[labels]
    picked = (logits * onehot).sum(axes=-1)
    return (tn.logsumexp(logits, axis=-1) - picked).sum()


def ssl_loss(features: Tensor, keys, params: Params) -> Tensor:
    """Cross-entropy of the discriminator on augmented features against the key labels."""
    keys = [keys] if isinstance(keys, AugmentationKey) else list(keys)
    logits = discriminator_logits(features, params)
    k = params["disc.w"].shape[1]
    if any(not 0 <= key.label < k for key in keys):
        raise ContractError(f"augmentation label outside discriminator range [0, {k})")
    return cross_entropy(logits, [key.label for key in keys])


def alignment_residual(transported: Tensor, augmented: Tensor, lam: float) -> Tensor:
    """|| |transported - augmented| - lam ||_F^2, summed over everything."""
    if lam < 0:
        raise ConfigError("alignment slack must be non-negative")
    a, b = tn.as_tensor(transported), tn.as_tensor(augmented)
    if a.shape != b.shape:
        raise ContractError(f"attention shapes differ: {a.shape} vs {b.shape}")
    r = tn.abs_(a - b)
    if lam:
        r = r - lam
    return (r * r).sum()


def align_loss(att_orig: AttentionPair, att_aug: AttentionPair, keys, lam: float = 0.0) -> Tensor:
    """Alignment between transported original attention and attention on the augmented clip.

    Spatial kinds compare spatial maps, temporal jigsaw compares temporal vectors.
    """
    kind = keys.kind if isinstance(keys, AugmentationKey) else keys[0].kind
    moved = transport_attention(att_orig, keys)
    if kind == "temporal-jigsaw":
        return alignment_residual(moved.temporal, att_aug.temporal, lam)
    if att_aug.spatial is None:
        raise ConfigError(f"{kind} alignment needs spatial attention")
    return alignment_residual(moved.spatial, att_aug.spatial, lam)


def total_objective(loss, loss_ssl, loss_align, beta_ssl: float, gamma: float) -> Tensor:
    """L + beta_ssl * L_ssl + gamma * L_align; a zero weight drops its term from the graph."""
    if beta_ssl < 0 or gamma < 0:
        raise ConfigError("objective weights must be non-negative")
    total = tn.as_tensor(loss)
    if beta_ssl and loss_ssl is not None:
        total = total + tn.scalar_mul(tn.as_tensor(loss_ssl), beta_ssl)
    if gamma and loss_align is not None:
        total = total + tn.scalar_mul(tn.as_tensor(loss_align), gamma)
    return total
